use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bicluster::BiclusterSet;
use crate::error::{Error, Result};
use crate::grid::{Board, Gridworld};

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    serde_json::from_reader(r).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Creates (or reuses) an output directory.
pub fn ensure_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Boards together with the biclusters they arrange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardsFile {
    pub biclusters: BiclusterSet,
    pub boards: Vec<Board>,
    /// Total adjacent distance of each board.
    pub h: Vec<f64>,
}

impl BoardsFile {
    pub fn world(&self) -> Result<Gridworld> {
        Gridworld::new(self.boards.clone(), self.biclusters.biclusters.clone())
    }
}
