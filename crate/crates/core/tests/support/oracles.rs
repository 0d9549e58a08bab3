//! Brute-force reference implementations used as test oracles. Kept apart
//! from the library code paths they check.
#![allow(dead_code)]

/// First `i` in 1..n-1 maximizing `(n - i)(d_1 - d_i)/(d_1 - d_n)`.
pub fn split_argmax(d: &[f64]) -> usize {
    let n = d.len();
    let c = d[0] - d[n - 1];
    let mut best_i = 1;
    let mut best_f = f64::NEG_INFINITY;
    for i in 1..n {
        let f = ((n - i) as f64) * (d[0] - d[i - 1]) / c;
        if f > best_f {
            best_f = f;
            best_i = i;
        }
    }
    best_i
}

/// Indices whose rank (strictly greater values, or equal values at a lower
/// index) is below `k`, ascending.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let n = values.len();
    (0..n)
        .filter(|&j| {
            (0..n)
                .filter(|&m| values[m] > values[j] || (values[m] == values[j] && m < j))
                .count()
                < k
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RefStep {
    /// Live set after the step, ascending.
    pub live: Vec<usize>,
    pub evicted: Option<usize>,
    /// Arrival indices `>= recent_start` form the recent window.
    pub recent_start: usize,
}

struct Slot {
    index: usize,
    key: Vec<f32>,
    score: f64,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] as f64 * b[k] as f64;
    }
    s
}

/// Step-by-step heavy/recent simulation over raw token embeddings. At each
/// arrival every slot is inspected and the eviction victim is chosen by a
/// full scan.
pub fn simulate_eviction(
    tokens: &[Vec<f32>],
    heavy: usize,
    recent: usize,
    include_self: bool,
) -> Vec<RefStep> {
    let mut slots: Vec<Slot> = Vec::new();
    let mut steps = Vec::new();
    for (t, q) in tokens.iter().enumerate() {
        let scale = (q.len() as f64).sqrt();
        let mut logits: Vec<f64> = slots.iter().map(|s| dot(q, &s.key) / scale).collect();
        logits.push(dot(q, q) / scale);
        let mut max = logits[0];
        for &l in &logits {
            if l > max {
                max = l;
            }
        }
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (slot, e) in slots.iter_mut().zip(&exps) {
            slot.score += e / total;
        }
        slots.push(Slot {
            index: t,
            key: q.clone(),
            score: if include_self {
                exps[exps.len() - 1] / total
            } else {
                0.0
            },
        });

        let processed = t + 1;
        let recent_start = processed.saturating_sub(recent);
        let mut evicted = None;
        if slots.len() > heavy + recent {
            let mut victim: Option<usize> = None;
            for (pos, s) in slots.iter().enumerate() {
                if s.index >= recent_start {
                    continue;
                }
                match victim {
                    Some(v) if slots[v].score <= s.score => {}
                    _ => victim = Some(pos),
                }
            }
            let pos = victim.expect("reference: no candidate");
            evicted = Some(slots.remove(pos).index);
        }
        steps.push(RefStep {
            live: slots.iter().map(|s| s.index).collect(),
            evicted,
            recent_start,
        });
    }
    steps
}
