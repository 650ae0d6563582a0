use serde::Serialize;

/// Pass/fail record of one property check, as written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub check_name: String,
    pub pass: bool,
    pub statistic: f64,
    pub threshold: f64,
}

impl Check {
    /// Passes when `statistic <= threshold`.
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            check_name: name.into(),
            pass: statistic <= threshold,
            statistic,
            threshold,
        }
    }

    /// Passes when `statistic >= threshold`.
    pub fn at_least(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            check_name: name.into(),
            pass: statistic >= threshold,
            statistic,
            threshold,
        }
    }
}

/// Shortest round-trip decimal for a float; empty for a missing value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// In-memory CSV table.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("write to memory");
        Self { writer }
    }

    pub fn row<I, T>(&mut self, fields: I)
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("write to memory");
    }

    pub fn finish(self) -> String {
        let bytes = self.writer.into_inner().expect("flush to memory");
        String::from_utf8(bytes).expect("CSV of ASCII fields")
    }
}
