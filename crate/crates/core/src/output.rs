//! Plain-text emitters shared by the experiment outputs.

use std::fmt::Write as _;

/// Decimal scientific notation with 17 significant digits, which round-trips
/// every finite `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Minimal CSV accumulator: a mandatory header and numeric or text cells.
#[derive(Clone, Debug)]
pub struct CsvTable {
    columns: usize,
    text: String,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = String::new();
        let names: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        text.push_str(&names.join(","));
        text.push('\n');
        Self {
            columns: header.len(),
            text,
        }
    }

    pub fn push_row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.columns, "row width mismatch");
        for (k, c) in cells.iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(x) => self.text.push_str(&fmt_f64(*x)),
                Cell::I(i) => {
                    let _ = write!(self.text, "{i}");
                }
                Cell::S(s) => self.text.push_str(s),
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[derive(Clone, Debug)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::S(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
    }

    #[test]
    fn table_layout() {
        let mut t = CsvTable::new(&["a", "b", "c"]);
        t.push_row(&[Cell::from(1usize), Cell::from(0.5), Cell::from("x")]);
        assert_eq!(t.as_str(), "a,b,c\n1,5.0000000000000000e-1,x\n");
    }
}
