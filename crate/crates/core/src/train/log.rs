use std::fs;
use std::io::{self, Write};
use std::path::Path;

pub const LOG_HEADER: &str = "step,d_e,d_mmd,d_d,d_global,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRecord {
    pub step: usize,
    pub d_e: f64,
    pub d_mmd: f64,
    pub d_d: f64,
    pub d_global: f64,
    pub wall_ms: u64,
}

impl TrainLogRecord {
    /// Values use the shortest representation that parses back exactly.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{}",
            self.step, self.d_e, self.d_mmd, self.d_d, self.d_global, self.wall_ms
        )
    }
}

pub fn write_log_csv(records: &[TrainLogRecord], path: &Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{LOG_HEADER}")?;
    for r in records {
        writeln!(f, "{}", r.to_csv_row())?;
    }
    f.flush()
}

pub fn read_log_csv(path: &Path) -> io::Result<Vec<TrainLogRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "missing log header"));
    }
    lines
        .map(|line| {
            let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("bad log row {line:?}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(TrainLogRecord {
                step: f[0].parse().map_err(|_| bad())?,
                d_e: num(f[1])?,
                d_mmd: num(f[2])?,
                d_d: num(f[3])?,
                d_global: num(f[4])?,
                wall_ms: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
