use std::collections::{HashMap, VecDeque};

use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, Region, UopContext};

use super::{InitTracker, ModelParams};

/// Prefetches the line after every load.
#[derive(Clone, Debug)]
pub struct NextLinePrefetch {
    line_bits: u32,
}

impl NextLinePrefetch {
    pub fn new(p: &ModelParams) -> Self {
        NextLinePrefetch {
            line_bits: p.cacheline_bits,
        }
    }
}

impl LeakageClause for NextLinePrefetch {
    fn name(&self) -> &str {
        "pf-nl"
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, _: &MachineState) -> Option<Observation> {
        let MicroOp::Load { addr, .. } = *uop else {
            return None;
        };
        Some(Observation::new(Tag::Prefetch, [(addr >> self.line_bits) + 1]))
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}

/// Detects monotone line streams within a page.
#[derive(Clone, Debug)]
pub struct StreamPrefetch {
    line_bits: u32,
    page_bits: u32,
    hits: usize,
    pages: HashMap<u64, VecDeque<u64>>,
}

impl StreamPrefetch {
    pub fn new(p: &ModelParams) -> Self {
        StreamPrefetch {
            line_bits: p.cacheline_bits,
            page_bits: p.page_bits,
            hits: p.pf_hits,
            pages: HashMap::new(),
        }
    }
}

fn direction(history: &VecDeque<u64>, full: usize) -> i64 {
    if history.len() < full {
        return 0;
    }
    let diffs: Vec<i64> = history
        .iter()
        .zip(history.iter().skip(1))
        .map(|(&a, &b)| b.wrapping_sub(a) as i64)
        .collect();
    if diffs.iter().all(|&d| d > 0) {
        1
    } else if diffs.iter().all(|&d| d < 0) {
        -1
    } else {
        0
    }
}

impl LeakageClause for StreamPrefetch {
    fn name(&self) -> &str {
        "pf-s"
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, _: &MachineState) -> Option<Observation> {
        let MicroOp::Load { addr, .. } = *uop else {
            return None;
        };
        let line = addr >> self.line_bits;
        let page = addr >> self.page_bits;
        let history = self.pages.entry(page).or_default();
        if !history.contains(&line) {
            history.push_back(line);
            if history.len() > self.hits {
                history.pop_front();
            }
        }
        let dir = direction(history, self.hits);
        let next = line.wrapping_add_signed(dir);
        (dir != 0 && next >> (self.page_bits - self.line_bits) == page).then(|| Observation::new(Tag::Prefetch, [next]))
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}

/// Pointer-chasing prefetcher: spots loads whose address was the value of
/// an earlier load and, once those producers form a constant stride,
/// prefetches ahead along it.
#[derive(Clone, Debug)]
pub struct DataDependentPrefetch {
    history: usize,
    hits: usize,
    prefetch: usize,
    word: u8,
    accesses: VecDeque<(u64, u64)>,
    marks: VecDeque<u64>,
    init: InitTracker,
}

impl DataDependentPrefetch {
    pub fn new(p: &ModelParams) -> Self {
        DataDependentPrefetch {
            history: p.m1pf_size,
            hits: p.pf_hits,
            prefetch: p.m1pf_prefetch,
            word: p.word_read_size,
            accesses: VecDeque::new(),
            marks: VecDeque::new(),
            init: InitTracker::default(),
        }
    }

    fn stride(&self) -> Option<u64> {
        if self.marks.len() < self.hits || self.hits < 2 {
            return None;
        }
        let d = self.marks[1].wrapping_sub(self.marks[0]);
        self.marks
            .iter()
            .zip(self.marks.iter().skip(1))
            .all(|(&a, &b)| b.wrapping_sub(a) == d)
            .then_some(d)
            .filter(|&d| d != 0)
    }
}

impl LeakageClause for DataDependentPrefetch {
    fn name(&self) -> &str {
        "pf-dd"
    }

    fn on_start(&mut self, initialized: &[Region]) {
        self.init.seed(initialized);
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, st: &MachineState) -> Option<Observation> {
        match *uop {
            MicroOp::Store { addr, size, .. } => {
                self.init.mark(addr, u64::from(size));
                None
            }
            MicroOp::Load { addr, size } => {
                let value = st.mem.read(addr, size);
                let mut stride = None;
                if let Some(&(producer, _)) = self.accesses.iter().rev().find(|&&(_, v)| v == addr) {
                    self.marks.push_back(producer);
                    if self.marks.len() > self.hits {
                        self.marks.pop_front();
                    }
                    stride = self.stride();
                }
                self.accesses.push_back((addr, value));
                if self.accesses.len() > self.history {
                    self.accesses.pop_front();
                }
                let stride = stride?;
                let last = *self.marks.back()?;
                let mut payload = Vec::new();
                for i in 0..self.prefetch as u64 {
                    let a = last.wrapping_add(i.wrapping_mul(stride));
                    if self.init.all_init(a, u64::from(self.word)) {
                        payload.push(a);
                        payload.push(st.mem.read(a, self.word));
                    }
                }
                Some(Observation::new(Tag::Prefetch, payload))
            }
            _ => None,
        }
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::feed;

    fn load(addr: u64) -> MicroOp {
        MicroOp::Load { addr, size: 1 }
    }

    #[test]
    fn next_line() {
        let st = MachineState::default();
        let mut nl = NextLinePrefetch::new(&ModelParams::default());
        for (addr, line) in [(0x2000, 0x81), (0x203f, 0x81), (0x2040, 0x82)] {
            assert_eq!(
                feed(&mut nl, load(addr), &st, 0),
                Some(Observation::new(Tag::Prefetch, [line]))
            );
        }
    }

    fn stream(lines: &[u64]) -> Vec<Option<Observation>> {
        let st = MachineState::default();
        let mut s = StreamPrefetch::new(&ModelParams::default());
        lines.iter().map(|&l| feed(&mut s, load(l << 6), &st, 0)).collect()
    }

    #[test]
    fn stream_ascending() {
        let out = stream(&[0x80, 0x81, 0x82]);
        assert_eq!(out[..2], [None, None]);
        assert_eq!(out[2], Some(Observation::new(Tag::Prefetch, [0x83])));
    }

    #[test]
    fn stream_descending_and_mixed() {
        assert_eq!(
            stream(&[0x85, 0x84, 0x82])[2],
            Some(Observation::new(Tag::Prefetch, [0x81]))
        );
        assert_eq!(stream(&[0x80, 0x82, 0x81])[2], None);
    }

    #[test]
    fn stream_page_bound() {
        // 0xbf is the last line of page 2.
        assert_eq!(stream(&[0xbd, 0xbe, 0xbf])[2], None);
        assert_eq!(stream(&[0x82, 0x81, 0x80])[2], None);
        assert!(stream(&[0xbc, 0xbd, 0xbe])[2].is_some());
    }

    #[test]
    fn stream_pages_are_independent() {
        assert_eq!(stream(&[0x80, 0xc0, 0x81, 0xc1, 0x82]).iter().flatten().count(), 1);
    }

    fn chain(base: u64, n: u64) -> MachineState {
        let mut st = MachineState::default();
        for i in 0..n {
            st.mem.write(base + 8 * i, 8, base + 8 * (i + 1));
        }
        st
    }

    fn chase(st: &MachineState, init: &[Region], base: u64, loads: u64) -> Vec<Option<Observation>> {
        let mut dd = DataDependentPrefetch::new(&ModelParams::default());
        dd.on_start(init);
        (0..loads)
            .map(|i| {
                feed(
                    &mut dd,
                    MicroOp::Load {
                        addr: base + 8 * i,
                        size: 8,
                    },
                    st,
                    0,
                )
            })
            .collect()
    }

    #[test]
    fn pointer_chase_prefetches_ahead() {
        let st = chain(0x6000, 16);
        let out = chase(&st, &[Region::new(0x6000, 128)], 0x6000, 4);
        assert_eq!(out[..3], [None, None, None]);
        // marks 0x6000, 0x6008, 0x6010; stride 8
        let expect: Vec<u64> = (0..5)
            .flat_map(|i| {
                let a = 0x6010 + 8 * i;
                [a, a + 8]
            })
            .collect();
        assert_eq!(out[3], Some(Observation::new(Tag::Prefetch, expect)));
    }

    #[test]
    fn uninitialized_targets_are_omitted() {
        let st = chain(0x6000, 16);
        // 0x6020 is initialized only in part.
        let init = [Region::new(0x6000, 0x24), Region::new(0x6028, 0x40)];
        let out = chase(&st, &init, 0x6000, 4);
        let obs = out[3].clone().unwrap();
        let addrs: Vec<u64> = obs.payload.iter().step_by(2).copied().collect();
        assert_eq!(addrs, [0x6010, 0x6018, 0x6028, 0x6030]);
    }

    #[test]
    fn stores_initialize() {
        let mut st = chain(0x6000, 16);
        st.mem.write(0x7000, 1, 0);
        let mut dd = DataDependentPrefetch::new(&ModelParams::default());
        for i in 0..16 {
            feed(
                &mut dd,
                MicroOp::Store {
                    addr: 0x6000 + 8 * i,
                    size: 8,
                    value: 0,
                },
                &st,
                0,
            );
        }
        let out: Vec<_> = (0..4)
            .map(|i| {
                feed(
                    &mut dd,
                    MicroOp::Load {
                        addr: 0x6000 + 8 * i,
                        size: 8,
                    },
                    &st,
                    0,
                )
            })
            .collect();
        assert_eq!(out[3].as_ref().unwrap().payload.len(), 10);
    }

    #[test]
    fn unrelated_values_never_fire() {
        let st = MachineState::default();
        let out = chase(&st, &[Region::new(0x6000, 128)], 0x6000, 10);
        assert!(out.iter().all(Option::is_none));
    }
}
