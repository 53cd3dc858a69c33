use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::MultiBehaviorGraph;
use crate::error::{Error, Result};

/// A loaded dataset together with the token ↔ index mapping. Index `n`
/// corresponds to `user_tokens[n]` (resp. `item_tokens[n]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Interactions {
    pub graph: MultiBehaviorGraph,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
}

#[derive(Default)]
struct Interner {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Interner {
    fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.index.insert(token.to_string(), i);
        self.tokens.push(token.to_string());
        i
    }
}

/// Reads `user<TAB>item<TAB>behavior` lines with behaviors numbered
/// `1..=num_behaviors`. Tokens are remapped to dense indices in order of
/// first appearance. Blank lines are skipped.
pub fn parse_interactions<R: Read>(reader: R, num_behaviors: usize) -> Result<Interactions> {
    if num_behaviors == 0 {
        return Err(Error::InvalidArgument("number of behaviors must be positive".into()));
    }
    let mut users = Interner::default();
    let mut items = Interner::default();
    let mut edges = vec![Vec::new(); num_behaviors];
    let mut seen_any = false;

    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `user<TAB>item<TAB>behavior`, got {line:?}"),
            });
        }
        let behavior: usize = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("behavior {:?} is not a positive integer", fields[2]),
        })?;
        if behavior == 0 || behavior > num_behaviors {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("behavior {behavior} outside 1..={num_behaviors}"),
            });
        }
        let u = users.intern(fields[0]);
        let i = items.intern(fields[1]);
        edges[behavior - 1].push((u, i));
        seen_any = true;
    }
    if !seen_any {
        return Err(Error::InvalidArgument("interaction file is empty".into()));
    }
    let graph = MultiBehaviorGraph::from_edges(users.tokens.len(), items.tokens.len(), edges)?;
    Ok(Interactions {
        graph,
        user_tokens: users.tokens,
        item_tokens: items.tokens,
    })
}

pub fn load_interactions(path: impl AsRef<Path>, num_behaviors: usize) -> Result<Interactions> {
    parse_interactions(File::open(path)?, num_behaviors)
}

/// Writes the graph in the dataset format, one line per edge, ordered by
/// user, then item, then behavior.
pub fn write_interactions(
    path: impl AsRef<Path>,
    graph: &MultiBehaviorGraph,
    user_tokens: &[String],
    item_tokens: &[String],
) -> Result<()> {
    let mut rows: Vec<(usize, usize, usize)> = (0..graph.num_behaviors())
        .flat_map(|k| graph.edges(k).iter().map(move |&(u, i)| (u, i, k)))
        .collect();
    rows.sort_unstable();
    let mut w = BufWriter::new(File::create(path)?);
    for (u, i, k) in rows {
        writeln!(w, "{}\t{}\t{}", user_tokens[u], item_tokens[i], k + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `token<TAB>index` lines.
pub fn write_mapping(path: impl AsRef<Path>, tokens: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, t) in tokens.iter().enumerate() {
        writeln!(w, "{t}\t{i}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mapping(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (tok, idx) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: "expected `token<TAB>index`".into(),
        })?;
        let idx: usize = idx.parse().map_err(|_| Error::Parse {
            line: n + 1,
            msg: format!("bad index {idx:?}"),
        })?;
        if idx != tokens.len() {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("indices must be dense and ordered, expected {}", tokens.len()),
            });
        }
        tokens.push(tok.to_string());
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_from_three_lines() {
        let data = "a\tx\t1\na\ty\t1\na\ty\t2\n";
        let d = parse_interactions(data.as_bytes(), 2).unwrap();
        assert_eq!(d.graph.num_users(), 1);
        assert_eq!(d.graph.num_items(), 2);
        assert_eq!(d.graph.num_edges(0), 2);
        assert_eq!(d.graph.num_edges(1), 1);
        assert_eq!(d.item_tokens, vec!["x", "y"]);
    }

    #[test]
    fn duplicate_lines_count_once() {
        let d = parse_interactions("a\tx\t1\na\tx\t1\n".as_bytes(), 1).unwrap();
        assert_eq!(d.graph.num_edges(0), 1);
    }

    #[test]
    fn behavior_out_of_range_names_line() {
        let err = parse_interactions("a\tx\t1\nb\ty\t5\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_and_empty_inputs() {
        assert!(matches!(
            parse_interactions("a x 1\n".as_bytes(), 1),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_interactions("".as_bytes(), 1).is_err());
        assert!(parse_interactions("a\tx\tone\n".as_bytes(), 1).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = parse_interactions("u1\ti1\t1\nu2\ti1\t2\nu1\ti2\t2\n".as_bytes(), 2).unwrap();
        let path = dir.path().join("data.tsv");
        write_interactions(&path, &d.graph, &d.user_tokens, &d.item_tokens).unwrap();
        let again = load_interactions(&path, 2).unwrap();
        for k in 0..2 {
            let mut a: Vec<_> = d
                .graph
                .edges(k)
                .iter()
                .map(|&(u, i)| (d.user_tokens[u].clone(), d.item_tokens[i].clone()))
                .collect();
            let mut b: Vec<_> = again
                .graph
                .edges(k)
                .iter()
                .map(|&(u, i)| (again.user_tokens[u].clone(), again.item_tokens[i].clone()))
                .collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
        let map = dir.path().join("users.tsv");
        write_mapping(&map, &d.user_tokens).unwrap();
        assert_eq!(read_mapping(&map).unwrap(), d.user_tokens);
    }
}
