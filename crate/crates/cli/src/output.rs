//! Output directory, run manifest and plot script stub.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

/// Record of one CLI run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub scheme: Option<String>,
    pub threads: usize,
    pub parameters: BTreeMap<String, serde_json::Value>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

/// Files go through here one at a time, so a run has a single writer.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl OutDir {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes `name` through `f` and records its hash.
    pub fn write<F>(&mut self, name: &str, f: F) -> io::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let mut out = BufWriter::new(File::create(self.dir.join(name))?);
        out.write_all(&buf)?;
        out.flush()?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(&buf),
        });
        Ok(())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> io::Result<()> {
        manifest.files = std::mem::take(&mut self.files);
        let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        fs::write(self.dir.join("manifest.json"), text + "\n")
    }
}

/// Matplotlib script for the CSVs a command wrote.
pub fn plot_script(command: &str) -> String {
    let body = match command {
        "simulate" => {
            "d = pd.read_csv('loss_distribution.csv')\n\
             plt.hist(d['loss_at_t'], bins=50, density=True)\n\
             plt.xlabel('loss')\n"
        }
        "approx" | "var" => {
            "d = pd.read_csv('lattice.csv')\n\
             fig, ax = plt.subplots(1, 2, figsize=(10, 4))\n\
             ax[0].plot(d['loss'], d['cdf'])\n\
             ax[0].set_xlabel('loss')\n\
             ax[0].set_ylabel('cdf')\n\
             ax[1].plot(d['loss'], d['pdf'])\n\
             ax[1].set_xlabel('loss')\n\
             ax[1].set_ylabel('pdf')\n"
        }
        "skeleton" => {
            "d = pd.read_csv('skeleton.csv')\n\
             for _, g in list(d.groupby('sample_id'))[:200]:\n\
             \x20   plt.plot(g['t'], g['loss'], lw=0.5, alpha=0.5)\n\
             plt.xlabel('t')\n\
             plt.ylabel('loss')\n"
        }
        _ => "",
    };
    format!(
        "# Plot stub generated by `pooledloss {command}`; run from the output directory.\n\
         import matplotlib.pyplot as plt\n\
         import pandas as pd\n\n\
         {body}\
         plt.tight_layout()\n\
         plt.savefig('{command}.png', dpi=150)\n"
    )
}
