//! Published average accuracies (%) of the method and its comparisons,
//! shown next to local results. They are reference values only; nothing
//! here is recomputed. Values are kept as the exact strings that were
//! reported so that they render unchanged.

/// One row of a reference table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishedRow {
    pub scheme: &'static str,
    pub values: &'static [&'static str],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishedTable {
    pub title: &'static str,
    pub columns: &'static [&'static str],
    pub rows: &'static [PublishedRow],
}

pub const PICAI_TABLE: PublishedTable = PublishedTable {
    title: "PI-CAI, K = 2",
    columns: &["Average accuracy"],
    rows: &[
        PublishedRow { scheme: "Non-incremental learning (upper bound)", values: &["83.21"] },
        PublishedRow { scheme: "Fine-tune (lower bound)", values: &["26.25"] },
        PublishedRow { scheme: "Method (full)", values: &["68.73"] },
    ],
};

pub const BENCHMARK_TABLE: PublishedTable = PublishedTable {
    title: "Class-incremental A_K after the final task",
    columns: &["OCT", "PathMNIST", "CIFAR-10"],
    rows: &[
        PublishedRow { scheme: "Joint learning (upper bound)", values: &["90.76", "89.28", "88.01"] },
        PublishedRow { scheme: "Fine-tune (lower bound)", values: &["33.33", "28.89", "32.20"] },
        PublishedRow { scheme: "LwF", values: &["44.8", "25.20", "32.90"] },
        PublishedRow { scheme: "GR", values: &["35.83", "21.95", "31.50"] },
        PublishedRow { scheme: "RWalk", values: &["33.33", "27.05", "35.00"] },
        PublishedRow { scheme: "OWM", values: &["38.93", "52.42", "48.30"] },
        PublishedRow { scheme: "EFT", values: &["43.20", "66.82", "60.65"] },
        PublishedRow { scheme: "BIR", values: &["62.00", "35.17", "64.68"] },
        PublishedRow { scheme: "Method (full)", values: &["64.43", "53.75", "67.23"] },
    ],
};

pub const ABLATION_TABLE: PublishedTable = PublishedTable {
    title: "Distillation-term ablation, A_K",
    columns: &["OCT", "CIFAR-10"],
    rows: &[
        PublishedRow { scheme: "Fine-tune (lower bound)", values: &["33.33", "32.20"] },
        PublishedRow { scheme: "L_KD = L_FAM", values: &["47.38", "44.21"] },
        PublishedRow { scheme: "L_KD = L_Cov", values: &["49.65", "46.14"] },
        PublishedRow { scheme: "Method (full)", values: &["64.43", "67.23"] },
    ],
};

pub const PUBLISHED_TABLES: [PublishedTable; 3] = [PICAI_TABLE, BENCHMARK_TABLE, ABLATION_TABLE];

impl PublishedTable {
    /// Markdown rendering, marked as published reference values.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("**{}** (published reference values, %)\n\n", self.title);
        s.push_str("| Scheme |");
        for c in self.columns {
            s.push_str(&format!(" {c} |"));
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(self.columns.len()));
        s.push('\n');
        for r in self.rows {
            s.push_str(&format!("| {} |", r.scheme));
            for v in r.values {
                s.push_str(&format!(" {v} |"));
            }
            s.push('\n');
        }
        s
    }

    pub fn value(&self, scheme: &str, column: &str) -> Option<&'static str> {
        let c = self.columns.iter().position(|x| *x == column)?;
        self.rows.iter().find(|r| r.scheme == scheme).map(|r| r.values[c])
    }
}

pub fn published_markdown() -> String {
    PUBLISHED_TABLES
        .iter()
        .map(PublishedTable::to_markdown)
        .collect::<Vec<_>>()
        .join("\n")
}
