//! Addressable max-priority queue of uncrawled pages.
//!
//! Entries are ordered by priority (highest first) and then by insertion
//! sequence (oldest first). With all priorities equal the queue drains in
//! insertion order, which is exactly breadth-first order. Priorities can be
//! changed in place without losing the entry's sequence number.
//!
//! Push, pop and update are `O(log n)`; membership is `O(1)` through a dense
//! page-indexed position table.

use std::cmp::Ordering;

use thiserror::Error;

use crate::corpus::PageId;

/// Priority given to seed pages. Strictly above every finite quality score.
pub const SEED_PRIORITY: f64 = f64::INFINITY;

const ABSENT: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum FrontierError {
    #[error("page {0} is already in the frontier")]
    AlreadyPresent(PageId),
    #[error("page {0} is not in the frontier")]
    Absent(PageId),
    #[error("pop from an empty frontier")]
    Empty,
    #[error("priority {priority} for page {page} is not allowed")]
    BadPriority { page: PageId, priority: f64 },
    #[error("page {0} is outside the frontier's page range")]
    OutOfRange(PageId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontierEntry {
    pub page: PageId,
    pub priority: f64,
    pub seq: u64,
}

impl FrontierEntry {
    /// `Greater` means "pops first".
    fn rank(&self, other: &Self) -> Ordering {
        // NaN is rejected on entry, so partial_cmp is total here.
        self.priority
            .partial_cmp(&other.priority)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Debug)]
pub struct Frontier {
    heap: Vec<FrontierEntry>,
    position: Vec<u32>,
    next_seq: u64,
    peak: usize,
}

impl Frontier {
    /// Frontier over pages `0..num_pages`.
    pub fn new(num_pages: usize) -> Self {
        Frontier {
            heap: Vec::new(),
            position: vec![ABSENT; num_pages],
            next_seq: 0,
            peak: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Largest size the frontier has reached.
    pub fn peak_len(&self) -> usize {
        self.peak
    }

    pub fn contains(&self, page: PageId) -> bool {
        self.position
            .get(page.index())
            .is_some_and(|&p| p != ABSENT)
    }

    pub fn priority(&self, page: PageId) -> Option<f64> {
        self.entry(page).map(|e| e.priority)
    }

    pub fn entry(&self, page: PageId) -> Option<&FrontierEntry> {
        match self.position.get(page.index()) {
            Some(&slot) if slot != ABSENT => Some(&self.heap[slot as usize]),
            _ => None,
        }
    }

    pub fn peek(&self) -> Option<&FrontierEntry> {
        self.heap.first()
    }

    /// Inserts a page and returns its insertion sequence number.
    pub fn push(&mut self, page: PageId, priority: f64) -> Result<u64, FrontierError> {
        if page.index() >= self.position.len() {
            return Err(FrontierError::OutOfRange(page));
        }
        check_priority(page, priority)?;
        if self.contains(page) {
            return Err(FrontierError::AlreadyPresent(page));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let slot = self.heap.len();
        self.heap.push(FrontierEntry {
            page,
            priority,
            seq,
        });
        self.position[page.index()] = slot as u32;
        self.sift_up(slot);
        self.peak = self.peak.max(self.heap.len());
        Ok(seq)
    }

    /// Re-keys a live entry. Its sequence number, and therefore its position
    /// among equal priorities, is kept.
    pub fn update_priority(&mut self, page: PageId, priority: f64) -> Result<(), FrontierError> {
        check_priority(page, priority)?;
        let slot = match self.position.get(page.index()) {
            Some(&s) if s != ABSENT => s as usize,
            _ => return Err(FrontierError::Absent(page)),
        };
        let old = std::mem::replace(&mut self.heap[slot].priority, priority);
        match priority.partial_cmp(&old) {
            Some(Ordering::Greater) => self.sift_up(slot),
            Some(Ordering::Less) => self.sift_down(slot),
            _ => {}
        }
        Ok(())
    }

    pub fn pop(&mut self) -> Result<(PageId, f64), FrontierError> {
        self.pop_entry().map(|e| (e.page, e.priority))
    }

    pub fn pop_entry(&mut self) -> Result<FrontierEntry, FrontierError> {
        if self.heap.is_empty() {
            return Err(FrontierError::Empty);
        }
        let last = self.heap.len() - 1;
        self.swap(0, last);
        let top = self.heap.pop().expect("non-empty");
        self.position[top.page.index()] = ABSENT;
        if !self.heap.is_empty() {
            self.sift_down(0);
        }
        Ok(top)
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.heap.swap(a, b);
        self.position[self.heap[a].page.index()] = a as u32;
        self.position[self.heap[b].page.index()] = b as u32;
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if self.heap[i].rank(&self.heap[parent]) == Ordering::Greater {
                self.swap(i, parent);
                i = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        let n = self.heap.len();
        loop {
            let left = 2 * i + 1;
            if left >= n {
                break;
            }
            let right = left + 1;
            let best = if right < n && self.heap[right].rank(&self.heap[left]) == Ordering::Greater {
                right
            } else {
                left
            };
            if self.heap[best].rank(&self.heap[i]) == Ordering::Greater {
                self.swap(i, best);
                i = best;
            } else {
                break;
            }
        }
    }
}

fn check_priority(page: PageId, priority: f64) -> Result<(), FrontierError> {
    if priority.is_nan() || priority == f64::NEG_INFINITY {
        Err(FrontierError::BadPriority { page, priority })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(i: u32) -> PageId {
        PageId::new(i)
    }

    /// Sorted-list model: entries (page, priority, seq), drained by
    /// (priority desc, seq asc).
    #[derive(Default)]
    struct ListOracle {
        entries: Vec<(PageId, f64, u64)>,
        seq: u64,
    }

    impl ListOracle {
        fn push(&mut self, page: PageId, prio: f64) {
            self.entries.push((page, prio, self.seq));
            self.seq += 1;
        }
        fn update(&mut self, page: PageId, prio: f64) {
            self.entries.iter_mut().find(|e| e.0 == page).unwrap().1 = prio;
        }
        fn pop(&mut self) -> Option<(PageId, f64)> {
            self.entries
                .sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.2.cmp(&b.2)));
            if self.entries.is_empty() {
                None
            } else {
                let e = self.entries.remove(0);
                Some((e.0, e.1))
            }
        }
    }

    #[test]
    fn single_element() {
        let mut f = Frontier::new(4);
        f.push(p(0), 0.5).unwrap();
        assert_eq!(f.pop().unwrap(), (p(0), 0.5));
        assert!(f.is_empty());
    }

    #[test]
    fn fifo_tie_break() {
        let mut f = Frontier::new(4);
        f.push(p(0), 0.5).unwrap();
        f.push(p(1), 0.5).unwrap();
        assert_eq!(f.pop().unwrap().0, p(0));
        assert_eq!(f.pop().unwrap().0, p(1));
    }

    #[test]
    fn max_priority_first() {
        let mut f = Frontier::new(4);
        f.push(p(0), 0.1).unwrap();
        f.push(p(1), 0.9).unwrap();
        assert_eq!(f.pop().unwrap(), (p(1), 0.9));

        let mut f = Frontier::new(4);
        f.push(p(0), 1.0).unwrap();
        f.push(p(1), 2.0).unwrap();
        assert_eq!(f.pop().unwrap(), (p(1), 2.0));
    }

    #[test]
    fn update_examples() {
        let mut f = Frontier::new(4);
        f.push(p(0), 0.5).unwrap();
        f.update_priority(p(0), 0.9).unwrap();
        f.push(p(1), 0.7).unwrap();
        assert_eq!(f.pop().unwrap().0, p(0));

        let mut f = Frontier::new(4);
        f.push(p(0), 0.9).unwrap();
        f.update_priority(p(0), 0.1).unwrap();
        f.push(p(1), 0.5).unwrap();
        assert_eq!(f.pop().unwrap().0, p(1));

        let mut f = Frontier::new(4);
        f.push(p(0), 0.5).unwrap();
        f.push(p(1), 0.5).unwrap();
        f.update_priority(p(0), 0.5).unwrap();
        assert_eq!(f.pop().unwrap().0, p(0));
    }

    #[test]
    fn update_keeps_sequence_position() {
        let mut f = Frontier::new(4);
        f.push(p(0), 0.5).unwrap();
        f.push(p(1), 0.9).unwrap();
        f.push(p(2), 0.5).unwrap();
        // drop p1 to the shared level; it entered after p0 and before p2
        f.update_priority(p(1), 0.5).unwrap();
        let order: Vec<_> = (0..3).map(|_| f.pop().unwrap().0).collect();
        assert_eq!(order, [p(0), p(1), p(2)]);
    }

    #[test]
    fn errors() {
        let mut f = Frontier::new(2);
        assert_eq!(f.pop(), Err(FrontierError::Empty));
        assert_eq!(f.update_priority(p(0), 1.0), Err(FrontierError::Absent(p(0))));
        f.push(p(0), 1.0).unwrap();
        assert_eq!(f.push(p(0), 2.0), Err(FrontierError::AlreadyPresent(p(0))));
        assert!(matches!(f.push(p(1), f64::NAN), Err(FrontierError::BadPriority { .. })));
        assert_eq!(f.push(p(5), 1.0), Err(FrontierError::OutOfRange(p(5))));
    }

    #[test]
    fn seed_sentinel_beats_any_score() {
        let mut f = Frontier::new(3);
        f.push(p(0), f64::MAX).unwrap();
        f.push(p(1), SEED_PRIORITY).unwrap();
        f.push(p(2), SEED_PRIORITY).unwrap();
        assert_eq!(f.pop().unwrap().0, p(1));
        assert_eq!(f.pop().unwrap().0, p(2));
        assert_eq!(f.pop().unwrap().0, p(0));
    }

    #[derive(Clone, Debug)]
    enum Op {
        Push(u32, u8),
        Update(u32, u8),
        Pop,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => (0u32..40, 0u8..6).prop_map(|(a, b)| Op::Push(a, b)),
            2 => (0u32..40, 0u8..6).prop_map(|(a, b)| Op::Update(a, b)),
            2 => Just(Op::Pop),
        ]
    }

    proptest! {
        #[test]
        fn matches_sorted_list(ops in prop::collection::vec(op(), 0..300)) {
            let mut f = Frontier::new(40);
            let mut oracle = ListOracle::default();
            let (mut pushes, mut pops) = (0usize, 0usize);
            for o in ops {
                match o {
                    Op::Push(page, level) => {
                        let prio = f64::from(level) / 4.0;
                        if !f.contains(p(page)) {
                            f.push(p(page), prio).unwrap();
                            oracle.push(p(page), prio);
                            pushes += 1;
                        }
                    }
                    Op::Update(page, level) => {
                        let prio = f64::from(level) / 4.0;
                        if f.contains(p(page)) {
                            f.update_priority(p(page), prio).unwrap();
                            oracle.update(p(page), prio);
                        }
                    }
                    Op::Pop => {
                        let got = f.pop().ok();
                        prop_assert_eq!(got, oracle.pop());
                        if got.is_some() { pops += 1; }
                    }
                }
                prop_assert_eq!(f.len(), pushes - pops);
            }
            while let Some(expected) = oracle.pop() {
                prop_assert_eq!(f.pop().unwrap(), expected);
            }
            prop_assert!(f.is_empty());
        }

        #[test]
        fn equal_priorities_drain_in_insertion_order(pages in prop::sample::subsequence((0u32..100).collect::<Vec<_>>(), 0..100).prop_shuffle()) {
            let mut f = Frontier::new(100);
            for &page in &pages {
                f.push(p(page), 0.0).unwrap();
            }
            let drained: Vec<u32> = std::iter::from_fn(|| f.pop().ok()).map(|(pg, _)| pg.get()).collect();
            prop_assert_eq!(drained, pages);
        }
    }
}
