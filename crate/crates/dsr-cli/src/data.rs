//! CSV dataset input: a header row naming the columns, one numeric row per
//! sample. The target column is the one named `y` (any case) if present,
//! otherwise the last column.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dsr_core::Dataset;

#[derive(Debug)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub variable_names: Vec<String>,
    pub target_name: String,
}

pub fn load_csv(path: &Path) -> Result<LoadedData> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dataset {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().with_context(|| format!("{} is empty", path.display()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.len() < 2 {
        bail!("{}: need at least one variable column and one target column", path.display());
    }
    let target_idx = names
        .iter()
        .position(|n| n.eq_ignore_ascii_case("y"))
        .unwrap_or(names.len() - 1);

    let mut x = Vec::new();
    let mut y = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            bail!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                names.len(),
                fields.len()
            );
        }
        let mut row = Vec::with_capacity(names.len() - 1);
        for (i, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .with_context(|| format!("{}:{}: bad number `{f}`", path.display(), lineno + 1))?;
            if i == target_idx {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        x.push(row);
    }
    let dataset = Dataset::new(x, y)?;
    let variable_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, n)| n.clone())
        .collect();
    Ok(LoadedData { dataset, variable_names, target_name: names[target_idx].clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(name: &str, contents: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_last_column_as_target() {
        let p = write_tmp("dsr_cli_data_1.csv", "x,y\n0,0\n1,2\n2,4\n");
        let d = load_csv(&p).unwrap();
        assert_eq!(d.dataset.dims(), 1);
        assert_eq!(d.dataset.y(), &[0.0, 2.0, 4.0]);
        assert_eq!(d.variable_names, vec!["x"]);
        assert_eq!(d.target_name, "y");
    }

    #[test]
    fn y_column_is_target_wherever_it_sits() {
        let p = write_tmp("dsr_cli_data_2.csv", "y,a,b\n5,1,2\n6,3,4\n");
        let d = load_csv(&p).unwrap();
        assert_eq!(d.dataset.dims(), 2);
        assert_eq!(d.dataset.y(), &[5.0, 6.0]);
        assert_eq!(d.variable_names, vec!["a", "b"]);
    }

    #[test]
    fn bad_rows_name_the_line() {
        let p = write_tmp("dsr_cli_data_3.csv", "x,y\n1,2\n3\n");
        let err = format!("{:#}", load_csv(&p).unwrap_err());
        assert!(err.contains(":3"), "{err}");
        let p = write_tmp("dsr_cli_data_4.csv", "x,y\n1,two\n");
        let err = format!("{:#}", load_csv(&p).unwrap_err());
        assert!(err.contains("two"), "{err}");
    }
}
