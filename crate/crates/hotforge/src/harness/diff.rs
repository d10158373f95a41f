//! Convenience patch differ: longest-common-subsequence over printed
//! instructions of the vulnerable and patched function. Suggests a patch
//! range when the insertion is one contiguous span.

use serde::Serialize;

use crate::ir::{print_instr, Function};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InsertedSpan {
    pub block: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffReport {
    pub spans: Vec<InsertedSpan>,
    pub contiguous: bool,
    /// `BLOCK:START..BLOCK:END` when the insertion is one span.
    pub suggestion: Option<String>,
}

fn flatten(f: &Function) -> Vec<(String, usize, String)> {
    let mut out = Vec::new();
    for b in &f.blocks {
        for (i, instr) in b.instrs.iter().enumerate() {
            out.push((b.label.clone(), i, print_instr(instr)));
        }
    }
    out
}

/// Instructions of `patched` that are not part of a longest common
/// subsequence with `vulnerable`, grouped into per-block spans.
pub fn diff_function(vulnerable: &Function, patched: &Function) -> DiffReport {
    let a: Vec<String> = flatten(vulnerable).into_iter().map(|(_, _, s)| s).collect();
    let b = flatten(patched);
    let n = a.len();
    let m = b.len();
    // Classic LCS table; fixtures are small.
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j].2 {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut inserted: Vec<&(String, usize, String)> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j].2 && lcs[i][j] == lcs[i + 1][j + 1] + 1 {
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            i += 1; // deletion from the vulnerable side
        } else {
            inserted.push(&b[j]);
            j += 1;
        }
    }
    inserted.extend(&b[j..]);

    let mut spans: Vec<InsertedSpan> = Vec::new();
    for (block, idx, _) in inserted {
        match spans.last_mut() {
            Some(s) if s.block == *block && s.end + 1 == *idx => s.end = *idx,
            _ => spans.push(InsertedSpan {
                block: block.clone(),
                start: *idx,
                end: *idx,
            }),
        }
    }
    let contiguous = spans.len() <= 1;
    let suggestion = if spans.len() == 1 {
        let s = &spans[0];
        Some(format!("{}:{}..{}:{}", s.block, s.start, s.block, s.end))
    } else {
        None
    };
    DiffReport {
        spans,
        contiguous,
        suggestion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn identical_functions_diff_empty() {
        let m = parse_module("fn f() {\nentry:\n  %x = const i32 1\n  ret %x\n}\n").unwrap();
        let d = diff_function(&m.functions[0], &m.functions[0]);
        assert!(d.spans.is_empty());
        assert!(d.contiguous);
        assert_eq!(d.suggestion, None);
    }

    #[test]
    fn two_inserted_instructions_make_one_span() {
        let v =
            parse_module("fn f(%a: i32) {\nentry:\n  %x = add i32 %a, 1\n  ret %x\n}\n").unwrap();
        let p = parse_module(
            "fn f(%a: i32) {\nentry:\n  %y = mul i32 %a, 2\n  %z = xor i32 %y, 5\n  %x = add i32 %a, 1\n  ret %x\n}\n",
        )
        .unwrap();
        let d = diff_function(&v.functions[0], &p.functions[0]);
        assert_eq!(
            d.spans,
            vec![InsertedSpan {
                block: "entry".into(),
                start: 0,
                end: 1
            }]
        );
        assert_eq!(d.suggestion.as_deref(), Some("entry:0..entry:1"));
    }
}
