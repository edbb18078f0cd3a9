//! Quantized discrete-Gaussian CDF tables.

use std::sync::OnceLock;

use lcr_tensor::ops::gaussian_interval_prob;

/// Probability resolution of every table, in bits.
pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;

/// In-range symbols are `-SUPPORT_RADIUS..=SUPPORT_RADIUS`; anything else goes
/// through the tail symbol plus an escape.
pub const SUPPORT_RADIUS: i32 = 24;

pub const SIGMA_FLOOR: f64 = 0.05;
pub const SIGMA_CEIL: f64 = 64.0;
pub const SIGMA_GRID_LEN: usize = 64;

/// Cumulative frequency table over `2r + 2` symbols: `-r..=r` followed by the
/// shared tail symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    symbol_offset: i32,
    cumulative: Vec<u32>,
}

impl CdfTable {
    /// Smallest in-range value.
    pub fn symbol_offset(&self) -> i32 {
        self.symbol_offset
    }

    /// `len() + 1` nondecreasing entries from 0 to [`TOTAL`].
    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    /// Number of symbols including the tail.
    pub fn len(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tail_symbol(&self) -> usize {
        self.len() - 1
    }

    pub fn count(&self, symbol: usize) -> u32 {
        self.cumulative[symbol + 1] - self.cumulative[symbol]
    }

    /// Symbol index for an in-range value, `None` if it needs the escape.
    pub fn symbol_of(&self, value: i32) -> Option<usize> {
        let s = value.checked_sub(self.symbol_offset)?;
        (s >= 0 && (s as usize) < self.tail_symbol()).then_some(s as usize)
    }

    /// Symbol whose interval contains `target` (< TOTAL).
    pub fn lookup(&self, target: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    /// Model cost of `value` in bits, including the 32 raw escape bits.
    pub fn cost_bits(&self, value: i32) -> f64 {
        match self.symbol_of(value) {
            Some(s) => -(self.count(s) as f64 / TOTAL as f64).log2(),
            None => -(self.count(self.tail_symbol()) as f64 / TOTAL as f64).log2() + 32.0,
        }
    }
}

/// Builds the table for `N(0, σ²)` discretized to unit bins on `[-r, r]`.
///
/// Each symbol gets `1 + ⌊p·(TOTAL − n)⌋` counts; the leftover counts go one
/// apiece to the most probable symbols (ties: lower index first).
pub fn build_cdf(sigma: f64, support_radius: i32) -> CdfTable {
    assert!(support_radius >= 0, "negative support radius");
    let sigma = if sigma.is_nan() { SIGMA_FLOOR } else { sigma.max(SIGMA_FLOOR) };
    let r = support_radius;
    let mut probs: Vec<f64> = (-r..=r).map(|k| gaussian_interval_prob(k as f64, sigma)).collect();
    // Both tails beyond ±(r + ½), evaluated on the lower tail for precision.
    probs.push(2.0 * lcr_tensor::ops::std_normal_cdf(-(r as f64 + 0.5) / sigma));
    let n = probs.len() as u32;
    assert!(n < TOTAL);
    let norm: f64 = probs.iter().sum();
    let spare = (TOTAL - n) as f64;
    let mut counts: Vec<u32> = probs
        .iter()
        .map(|p| 1 + (p / norm * spare).floor() as u32)
        .collect();
    let assigned: u32 = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let remainder = (TOTAL - assigned) as usize;
    for &s in order.iter().cycle().take(remainder) {
        counts[s] += 1;
    }
    let mut cumulative = Vec::with_capacity(counts.len() + 1);
    cumulative.push(0);
    let mut acc = 0;
    for c in counts {
        acc += c;
        cumulative.push(acc);
    }
    debug_assert_eq!(acc, TOTAL);
    CdfTable {
        symbol_offset: -r,
        cumulative,
    }
}

/// Grid value `i` of the 64-entry logarithmic scale grid over
/// `[SIGMA_FLOOR, SIGMA_CEIL]`.
pub fn sigma_grid_value(i: usize) -> f64 {
    assert!(i < SIGMA_GRID_LEN);
    let t = i as f64 / (SIGMA_GRID_LEN - 1) as f64;
    (SIGMA_FLOOR.ln() + t * (SIGMA_CEIL / SIGMA_FLOOR).ln()).exp()
}

/// Index of the grid value nearest to `sigma` in log space. Out-of-range and
/// non-finite inputs snap to the nearest end.
pub fn snap_sigma(sigma: f32) -> usize {
    let s = sigma as f64;
    if !(s > SIGMA_FLOOR) {
        return 0;
    }
    let t = (s / SIGMA_FLOOR).ln() / (SIGMA_CEIL / SIGMA_FLOOR).ln();
    let i = (t * (SIGMA_GRID_LEN - 1) as f64).round();
    if i.is_nan() {
        0
    } else {
        (i as usize).min(SIGMA_GRID_LEN - 1)
    }
}

/// The 64 precomputed tables, shared by encoder and decoder.
pub fn grid_tables() -> &'static [CdfTable] {
    static TABLES: OnceLock<Vec<CdfTable>> = OnceLock::new();
    TABLES.get_or_init(|| {
        (0..SIGMA_GRID_LEN)
            .map(|i| build_cdf(sigma_grid_value(i), SUPPORT_RADIUS))
            .collect()
    })
}

/// Table used for a scale value.
pub fn table_for_sigma(sigma: f32) -> &'static CdfTable {
    &grid_tables()[snap_sigma(sigma)]
}
