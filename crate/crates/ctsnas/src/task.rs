//! Bundled task data: windowed splits, scaler, graph and identifying
//! metadata, as consumed by the search engine and trainer.

use ndarray::Array2;

use crate::data::dataset::CtsDataset;
use crate::data::window::{
    pseudo_split, split_and_window, ForecastMode, Scaler, SplitSpec, WindowSet,
};
use crate::error::Result;
use crate::scalar::Scalar;

pub struct TaskData<F: Scalar> {
    pub train: WindowSet<F>,
    pub val: WindowSet<F>,
    pub test: WindowSet<F>,
    /// Pseudo-split of the training windows used by the bi-level search.
    pub d_train: WindowSet<F>,
    pub d_val: WindowSet<F>,
    pub scaler: Scaler<F>,
    pub adjacency: Option<Array2<F>>,
    pub dataset_name: String,
    pub dataset_hash: String,
    pub p: usize,
    pub q: usize,
    pub mode: ForecastMode,
}

impl<F: Scalar> TaskData<F> {
    pub fn n_nodes(&self) -> usize {
        self.train.n_nodes()
    }
    pub fn n_features(&self) -> usize {
        self.train.n_features()
    }
    pub fn out_steps(&self) -> usize {
        self.train.target_steps()
    }
}

pub fn prepare_task<F: Scalar>(
    ds: &CtsDataset<F>,
    split: &SplitSpec,
    p: usize,
    q: usize,
    mode: ForecastMode,
) -> Result<TaskData<F>> {
    let (train, val, test, scaler) = split_and_window(ds, split, p, q, mode)?;
    let (d_train, d_val) = pseudo_split(&train, split.pseudo_split)?;
    Ok(TaskData {
        d_train,
        d_val,
        train,
        val,
        test,
        scaler,
        adjacency: ds.adjacency.clone(),
        dataset_name: ds.name.clone(),
        dataset_hash: ds.content_hash(),
        p,
        q,
        mode,
    })
}
