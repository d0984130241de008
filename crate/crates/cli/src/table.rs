//! Small text tables printed both column-aligned and as CSV.

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: Vec<S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn aligned(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, cell) in width.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |r: &Vec<String>| {
            r.iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = vec![line(&self.header)];
        out.push(
            width
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("  "),
        );
        out.extend(self.rows.iter().map(line));
        out.join("\n")
    }

    pub fn csv(&self) -> String {
        let esc = |c: &String| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        };
        std::iter::once(&self.header)
            .chain(&self.rows)
            .map(|r| r.iter().map(esc).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_and_csv() {
        let mut t = Table::new(vec!["dataset", "mcl"]);
        t.push(vec!["mnist".into(), "77.36±1.27".into()]);
        assert_eq!(t.csv(), "dataset,mcl\nmnist,77.36±1.27");
        let a = t.aligned();
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], "dataset  mcl");
        assert_eq!(lines[2], "mnist    77.36±1.27");
    }

    #[test]
    fn csv_quotes() {
        let mut t = Table::new(vec!["a"]);
        t.push(vec!["x,\"y\"".into()]);
        assert_eq!(t.csv(), "a\n\"x,\"\"y\"\"\"");
    }
}
