//! Unit-cost ordered labeled tree edit distance (Zhang–Shasha).
//!
//! Node labels are `split f` for internal nodes and `leaf y` for leaves,
//! children ordered (zero, one).

use super::Tree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeLabel {
    Split(usize),
    Leaf(u32),
}

/// Post-order view of a tree: labels and leftmost-leaf indices, 1-based.
struct Postorder {
    labels: Vec<NodeLabel>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl Postorder {
    fn new(tree: &Tree) -> Self {
        let mut labels = vec![NodeLabel::Leaf(0)];
        let mut leftmost = vec![0];
        fn walk(t: &Tree, labels: &mut Vec<NodeLabel>, leftmost: &mut Vec<usize>) -> usize {
            match t {
                Tree::Leaf(l) => {
                    labels.push(NodeLabel::Leaf(*l));
                    let idx = labels.len() - 1;
                    leftmost.push(idx);
                    idx
                }
                Tree::Split { feature, zero, one } => {
                    let first = walk(zero, labels, leftmost);
                    let lm = leftmost[first];
                    walk(one, labels, leftmost);
                    labels.push(NodeLabel::Split(*feature));
                    leftmost.push(lm);
                    labels.len() - 1
                }
            }
        }
        walk(tree, &mut labels, &mut leftmost);
        let n = labels.len() - 1;
        // a keyroot is the highest node sharing its leftmost leaf
        let keyroots = (1..=n).filter(|&i| (i + 1..=n).all(|k| leftmost[k] != leftmost[i])).collect();
        Postorder { labels, leftmost, keyroots }
    }

    fn len(&self) -> usize {
        self.labels.len() - 1
    }
}

pub fn tree_edit_distance(a: &Tree, b: &Tree) -> usize {
    let a = Postorder::new(a);
    let b = Postorder::new(b);
    let (na, nb) = (a.len(), b.len());
    let mut td = vec![vec![0usize; nb + 1]; na + 1];
    let mut fd = vec![vec![0usize; nb + 2]; na + 2];

    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.leftmost[i], b.leftmost[j]);
            let (ioff, joff) = (li - 1, lj - 1);
            let m = i - ioff;
            let n = j - joff;
            fd[0][0] = 0;
            for x in 1..=m {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=n {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=m {
                for y in 1..=n {
                    let (ai, bj) = (x + ioff, y + joff);
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if a.leftmost[ai] == li && b.leftmost[bj] == lj {
                        let relabel = (a.labels[ai] != b.labels[bj]) as usize;
                        fd[x][y] = del.min(ins).min(fd[x - 1][y - 1] + relabel);
                        td[ai][bj] = fd[x][y];
                    } else {
                        let p = a.leftmost[ai] - 1 - ioff;
                        let q = b.leftmost[bj] - 1 - joff;
                        fd[x][y] = del.min(ins).min(fd[p][q] + td[ai][bj]);
                    }
                }
            }
        }
    }
    td[na][nb]
}
