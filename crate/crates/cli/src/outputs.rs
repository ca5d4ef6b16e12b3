//! Output bookkeeping: every path is registered before its first byte is
//! written, so a failing subcommand leaves no partial files behind.

use anyhow::Context;
use nucleoforge_core::array_io::{write_npy, write_ppm, Tensor};
use nucleoforge_core::ImageTile;
use std::path::{Path, PathBuf};

#[derive(Default)]
pub struct OutputTracker {
    written: Vec<PathBuf>,
}

impl OutputTracker {
    fn register(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    pub fn write_npy(&mut self, path: &Path, tensor: &Tensor) -> anyhow::Result<()> {
        self.register(path);
        write_npy(path, tensor).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_ppm(&mut self, path: &Path, img: &ImageTile) -> anyhow::Result<()> {
        self.register(path);
        write_ppm(path, img).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_text(&mut self, path: &Path, text: &str) -> anyhow::Result<()> {
        self.register(path);
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Deletes everything registered so far; called on command failure.
    pub fn remove_partial_outputs(&mut self) {
        for path in self.written.drain(..) {
            let _ = std::fs::remove_file(path);
        }
    }
}
