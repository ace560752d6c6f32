//! Comparison strategies: uniform random picks and non-adaptive recursive
//! rectangle partitioning.

use std::collections::VecDeque;

use rand::Rng;

use crate::domain::GridDomain;

/// Uniform draw among unmeasured indices. `None` when none remain.
pub fn random_next<R: Rng + ?Sized>(measured: &[bool], rng: &mut R) -> Option<usize> {
    let remaining = measured.iter().filter(|m| !**m).count();
    if remaining == 0 {
        return None;
    }
    let k = rng.random_range(0..remaining);
    measured
        .iter()
        .enumerate()
        .filter(|(_, m)| !**m)
        .nth(k)
        .map(|(i, _)| i)
}

/// Inclusive lattice rectangle `[r0, r1] x [c0, c1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

/// Breadth-first queue of rectangles whose corners have all been emitted.
///
/// The four domain corners come first, then the centre of the whole domain.
/// Each dequeued rectangle emits its centre followed by the midpoints of its
/// edges (row-major), then queues its sub-rectangles in row-major order.
/// Midpoints round toward the lower index. Points already emitted are
/// skipped.
#[derive(Debug, Clone)]
pub struct RectQueue {
    rows: usize,
    cols: usize,
    queue: VecDeque<Rect>,
    pending: VecDeque<usize>,
    visited: Vec<bool>,
    emitted: usize,
    started: bool,
}

impl RectQueue {
    pub fn new(domain: &GridDomain) -> Self {
        Self {
            rows: domain.rows(),
            cols: domain.cols(),
            queue: VecDeque::new(),
            pending: VecDeque::new(),
            visited: vec![false; domain.len()],
            emitted: 0,
            started: false,
        }
    }

    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    fn schedule(&mut self, r: usize, c: usize) {
        let i = self.idx(r, c);
        if !self.visited[i] {
            self.visited[i] = true;
            self.pending.push_back(i);
        }
    }

    fn start(&mut self) {
        self.started = true;
        let (r1, c1) = (self.rows - 1, self.cols - 1);
        self.schedule(0, 0);
        self.schedule(0, c1);
        self.schedule(r1, 0);
        self.schedule(r1, c1);
        self.queue.push_back(Rect { r0: 0, r1, c0: 0, c1 });
    }

    fn expand(&mut self, rect: Rect) {
        let Rect { r0, r1, c0, c1 } = rect;
        let rm = (r0 + r1) / 2;
        let cm = (c0 + c1) / 2;
        self.schedule(rm, cm);
        self.schedule(r0, cm);
        self.schedule(rm, c0);
        self.schedule(rm, c1);
        self.schedule(r1, cm);

        let row_spans: Vec<(usize, usize)> = if r1 - r0 >= 2 {
            vec![(r0, rm), (rm, r1)]
        } else {
            vec![(r0, r1)]
        };
        let col_spans: Vec<(usize, usize)> = if c1 - c0 >= 2 {
            vec![(c0, cm), (cm, c1)]
        } else {
            vec![(c0, c1)]
        };
        for &(a, b) in &row_spans {
            for &(c, d) in &col_spans {
                // a 2x2 (or smaller) block has no points beyond its corners
                if b - a >= 2 || d - c >= 2 {
                    self.queue.push_back(Rect {
                        r0: a,
                        r1: b,
                        c0: c,
                        c1: d,
                    });
                }
            }
        }
    }

    /// Next index in the canonical emission order.
    pub fn next_index(&mut self) -> Option<usize> {
        if !self.started {
            self.start();
        }
        loop {
            if let Some(i) = self.pending.pop_front() {
                self.emitted += 1;
                return Some(i);
            }
            match self.queue.pop_front() {
                Some(rect) => self.expand(rect),
                None => break,
            }
        }
        // the recursion covers the lattice; this sweep only guards the invariant
        let rest = self.visited.iter().position(|v| !v)?;
        self.visited[rest] = true;
        self.emitted += 1;
        Some(rest)
    }

    /// Next emitted index that is not yet measured.
    pub fn next_unmeasured(&mut self, measured: &[bool]) -> Option<usize> {
        loop {
            let i = self.next_index()?;
            if !measured[i] {
                return Some(i);
            }
        }
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }
}

/// Full emission order for a domain.
pub fn nonadaptive_order(domain: &GridDomain) -> Vec<usize> {
    let mut q = RectQueue::new(domain);
    std::iter::from_fn(|| q.next_index()).collect()
}
