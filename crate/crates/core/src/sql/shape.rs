use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::table::{render_grid, ResultTable};

/// What the analysis prompt is told about one fetched table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableShape {
    /// How the generated code refers to the table, e.g. `listOfDFs[0]`.
    pub label: String,
    pub columns: Vec<(String, String)>,
    pub row_count: usize,
    /// (row index, rendered cells) for each sampled row.
    pub sample: Vec<(usize, Vec<String>)>,
    /// Whether rows between the head and tail samples were left out.
    pub elided: bool,
}

/// Head-and-tail sampling once the table has more than `2 * n_sample` rows,
/// otherwise every row.
pub fn shape_of(t: &ResultTable, n_sample: usize, label: &str) -> TableShape {
    let n = t.row_count();
    let picks: Vec<usize> = if n > 2 * n_sample { (0..n_sample).chain(n - n_sample..n).collect() } else { (0..n).collect() };
    TableShape {
        label: label.to_string(),
        columns: t.columns.iter().cloned().zip(t.dtypes().into_iter().map(String::from)).collect(),
        row_count: n,
        sample: picks.into_iter().map(|i| (i, t.rows[i].iter().map(|c| c.render()).collect())).collect(),
        elided: n > 2 * n_sample,
    }
}

impl TableShape {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let cols: Vec<String> = self.columns.iter().map(|(n, d)| format!("{n} ({d})")).collect();
        if self.row_count == 0 {
            let _ = writeln!(out, "{}: empty, 0 rows; columns: {}", self.label, cols.join(", "));
            return out;
        }
        let _ = writeln!(
            out,
            "{}: {} rows x {} columns; columns: {}",
            self.label,
            self.row_count,
            self.columns.len(),
            cols.join(", ")
        );
        let header: Vec<String> =
            std::iter::once(String::new()).chain(self.columns.iter().map(|(n, _)| n.clone())).collect();
        let mut rows: Vec<Vec<String>> = Vec::with_capacity(self.sample.len() + 1);
        for (k, (idx, cells)) in self.sample.iter().enumerate() {
            if self.elided && k == self.sample.len() / 2 {
                rows.push(vec!["...".to_string(); header.len()]);
            }
            rows.push(std::iter::once(idx.to_string()).chain(cells.iter().cloned()).collect());
        }
        out.push_str(&render_grid(&header, &rows));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Cell;

    fn table(n: usize) -> ResultTable {
        ResultTable::new(
            vec!["id".into(), "score".into()],
            (0..n).map(|i| vec![Cell::Text(format!("tt{i}")), Cell::Integer(i as i64)]).collect(),
        )
    }

    #[test]
    fn head_and_tail_of_large_table() {
        let s = shape_of(&table(429_771), 3, "listOfDFs[0]");
        let idx: Vec<_> = s.sample.iter().map(|(i, _)| *i).collect();
        assert_eq!(idx, vec![0, 1, 2, 429_768, 429_769, 429_770]);
        assert!(s.elided);
        let text = s.render();
        assert!(text.starts_with("listOfDFs[0]: 429771 rows x 2 columns; columns: id (object), score (int64)\n"));
        assert!(text.contains("\n   ...      ...    ...\n"), "{text}");
        assert!(text.contains("429770 tt429770 429770\n"));
        assert_eq!(text, shape_of(&table(429_771), 3, "listOfDFs[0]").render());
    }

    #[test]
    fn small_tables_are_shown_whole() {
        let s = shape_of(&table(4), 3, "listOfDFs[1]");
        assert_eq!(s.sample.len(), 4);
        assert!(!s.elided);
        assert!(!s.render().contains("..."));
        assert_eq!(shape_of(&table(6), 3, "x").sample.len(), 6);
        assert!(shape_of(&table(7), 3, "x").elided);
    }

    #[test]
    fn empty_table() {
        let s = shape_of(&table(0), 3, "listOfDFs[0]");
        assert_eq!(s.row_count, 0);
        assert_eq!(s.render(), "listOfDFs[0]: empty, 0 rows; columns: id (object), score (object)\n");
    }
}
