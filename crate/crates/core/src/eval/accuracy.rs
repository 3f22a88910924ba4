use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::TaskStream;
use crate::error::{Error, Result};
use crate::metric::{accuracy, ncm_classify, CentroidStore, EmbeddingBackbone};

/// Lower-triangular matrix of test accuracies: entry `(i, j)` is the
/// accuracy on task `j`'s test split after training through task `i`
/// (both 1-based). Stored as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    tasks: usize,
    rows: Vec<Vec<f64>>,
    counts: Vec<Vec<usize>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            rows: Vec::new(),
            counts: Vec::new(),
        }
    }

    /// Builds a matrix from explicit rows; row `i` must have `i` entries.
    pub fn from_rows(tasks: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(tasks);
        for row in rows {
            let counts = vec![0; row.len()];
            m.push_row(row, counts)?;
        }
        Ok(m)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn completed(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.tasks
    }

    /// `a_{i,j}`, 1-based.
    pub fn entry(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i.checked_sub(1)?)?.get(j.checked_sub(1)?).copied()
    }

    pub fn push_row(&mut self, row: Vec<f64>, counts: Vec<usize>) -> Result<()> {
        let i = self.rows.len() + 1;
        if i > self.tasks {
            return Err(Error::IncompleteMatrix(format!("matrix already has {} rows", self.tasks)));
        }
        if row.len() != i || counts.len() != i {
            return Err(Error::IncompleteMatrix(format!(
                "row {i} must have {i} entries, got {}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::IncompleteMatrix(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        self.counts.push(counts);
        Ok(())
    }

    /// `A_K`: unweighted mean of the final row.
    pub fn average_accuracy(&self) -> Result<f64> {
        average_accuracy(self)
    }
}

/// `A_K = (1/K) Σ_j a_{K,j}`.
pub fn average_accuracy(matrix: &AccuracyMatrix) -> Result<f64> {
    if !matrix.is_complete() || matrix.tasks == 0 {
        return Err(Error::IncompleteMatrix(format!(
            "{} of {} rows present",
            matrix.completed(),
            matrix.tasks
        )));
    }
    let last = &matrix.rows[matrix.tasks - 1];
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// One evaluated row plus the embeddings it was computed from.
#[derive(Debug, Clone)]
pub struct RowEvaluation {
    pub accuracies: Vec<f64>,
    pub counts: Vec<usize>,
    /// Test embeddings of tasks `1..=i`, stacked in task order.
    pub embeddings: Array2<f32>,
    pub labels: Vec<u32>,
}

/// Classifies the test split of every task `j ≤ i` by nearest class mean over
/// the whole store. The store must hold exactly the classes of tasks
/// `1..=i`, so old and new classes compete (class-incremental inference).
pub fn evaluate_after_task(
    model: &EmbeddingBackbone,
    store: &CentroidStore,
    stream: &TaskStream,
    i: usize,
    chunk: usize,
) -> Result<RowEvaluation> {
    if i == 0 || i > stream.total_tasks() {
        return Err(Error::TaskOrder {
            expected: stream.total_tasks(),
            got: i,
        });
    }
    let expected = stream.classes_through(i);
    if let Some(c) = expected.iter().find(|c| store.get(**c).is_none()) {
        return Err(Error::MissingCentroid(*c));
    }
    if store.classes() != expected {
        return Err(Error::Config(format!(
            "centroid store holds {:?}, evaluation after task {i} expects {:?}",
            store.classes(),
            expected
        )));
    }
    let mut accuracies = Vec::with_capacity(i);
    let mut counts = Vec::with_capacity(i);
    let mut blocks = Vec::with_capacity(i);
    let mut all_labels = Vec::new();
    for task in stream.tasks.iter().take(i) {
        let (z, labels) = model.embed_view(&task.test, chunk)?;
        let predicted = ncm_classify(z.view(), store)?;
        accuracies.push(accuracy(&predicted, &labels));
        counts.push(labels.len());
        all_labels.extend_from_slice(&labels);
        blocks.push(z);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let embeddings = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(RowEvaluation {
        accuracies,
        counts,
        embeddings,
        labels: all_labels,
    })
}
