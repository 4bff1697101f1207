//! Reaching definitions over the CFG.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::cfg::{FunctionBody, UseDef};
use super::decode::Location;

/// Marks the value a location held on function entry.
const ENTRY: u64 = u64::MAX;

type Reaching = BTreeMap<Location, BTreeSet<u64>>;

fn transfer(state: &mut Reaching, body: &FunctionBody, block: usize, mut on_use: impl FnMut(u64, Location, &BTreeSet<u64>)) {
    for i in &body.blocks[block].instructions {
        for u in &i.uses {
            if let Some(defs) = state.get(u) {
                on_use(i.ea, *u, defs);
            }
        }
        for d in &i.defs {
            state.insert(*d, BTreeSet::from([i.ea]));
        }
    }
}

/// Fills `use_def` and `param_uses`. Blocks unreachable from the entry only
/// see definitions made inside the unreachable region.
pub fn compute_use_def(body: &mut FunctionBody) {
    let pos: BTreeMap<u64, usize> = body.blocks.iter().enumerate().map(|(i, b)| (b.ea, i)).collect();
    let locations: BTreeSet<Location> =
        body.instructions().flat_map(|i| i.uses.iter().chain(i.defs.iter()).copied()).collect();
    let mut at_entry: Vec<Reaching> = vec![Reaching::new(); body.blocks.len()];
    at_entry[0] = locations.iter().map(|l| (*l, BTreeSet::from([ENTRY]))).collect();

    let mut work: VecDeque<usize> = (0..body.blocks.len()).collect();
    let mut queued = vec![true; body.blocks.len()];
    while let Some(b) = work.pop_front() {
        queued[b] = false;
        let mut state = at_entry[b].clone();
        transfer(&mut state, body, b, |_, _, _| {});
        for s in &body.blocks[b].successors {
            let si = pos[s];
            let mut changed = false;
            for (loc, defs) in &state {
                let e = at_entry[si].entry(*loc).or_default();
                let before = e.len();
                e.extend(defs);
                changed |= e.len() != before;
            }
            if changed && !queued[si] {
                queued[si] = true;
                work.push_back(si);
            }
        }
    }

    let mut edges = BTreeSet::new();
    let mut params = BTreeSet::new();
    for (b, mut state) in at_entry.into_iter().enumerate() {
        transfer(&mut state, body, b, |ea, loc, defs| {
            for d in defs {
                if *d == ENTRY {
                    params.insert((ea, loc));
                } else {
                    edges.insert(UseDef { use_ea: ea, def_ea: *d, loc });
                }
            }
        });
    }
    body.use_def = edges;
    body.param_uses = params;
}
