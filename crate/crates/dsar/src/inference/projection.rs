//! Random-projection sketches of the covariance factors.
//!
//! Two d x N projectors R1, R2 with i.i.d. mean-zero entries of variance 1/d
//! satisfy E(R'R) = I, so traces of projected products are conditionally
//! unbiased for the originals. Workers derive projector columns from a shared
//! seed (column j is a fixed function of (seed, j)), so nothing about R is
//! ever communicated and all workers agree bit-for-bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mat::dmatrix_zeros;
use crate::rng::{self, purpose};
use crate::wire::Encoder;

use super::factors::{assemble_sigma1, BlockProducts, CrossBlockSign, WorkerFactors};
use super::VariancePlugins;

/// Projector entry law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    /// i.i.d. N(0, 1/d).
    Dense,
    /// Achlioptas-style: sqrt(3/d) * {+1 w.p. 1/6, 0 w.p. 2/3, -1 w.p. 1/6};
    /// matches the dense second moments.
    Sparse,
    /// Pass-through test hook (d = N, R = I).
    Identity,
}

impl ProjectorKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            ProjectorKind::Dense => 0,
            ProjectorKind::Sparse => 1,
            ProjectorKind::Identity => 2,
        }
    }
}

/// One d x N random projector, generated column-by-column on demand.
#[derive(Debug, Clone)]
pub struct Projector {
    pub kind: ProjectorKind,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    /// Distinguishes the R1 and R2 streams of a shared seed.
    pub stream: u8,
}

impl Projector {
    /// Identity pass-through hook.
    pub fn identity(n: usize) -> Self {
        Projector {
            kind: ProjectorKind::Identity,
            d: n,
            n,
            seed: 0,
            stream: 0,
        }
    }

    /// Write column j into `buf` (length d).
    pub fn fill_column(&self, j: usize, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.d);
        match self.kind {
            ProjectorKind::Identity => {
                buf.fill(0.0);
                buf[j] = 1.0;
            }
            ProjectorKind::Dense => {
                let mut rng = self.column_rng(j);
                let normal = Normal::new(0.0, (1.0 / self.d as f64).sqrt()).unwrap();
                for v in buf.iter_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            ProjectorKind::Sparse => {
                let mut rng = self.column_rng(j);
                let scale = (3.0 / self.d as f64).sqrt();
                for v in buf.iter_mut() {
                    let u: f64 = rng.random();
                    *v = if u < 1.0 / 6.0 {
                        scale
                    } else if u < 2.0 / 6.0 {
                        -scale
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    fn column_rng(&self, j: usize) -> rand_chacha::ChaCha20Rng {
        let mut r = rng::derive_rng(self.seed, &[purpose::PROJECTOR, self.stream as u64]);
        let mut seeded = rand_chacha::ChaCha20Rng::from_seed({
            let mut s = [0u8; 32];
            r.fill(&mut s);
            s
        });
        seeded.set_stream(j as u64);
        seeded
    }
}

/// Construct the shared projector pair (R1, R2).
pub fn make_projectors(n_nodes: usize, d: usize, seed: u64, sparse: bool) -> (Projector, Projector) {
    let kind = if sparse {
        ProjectorKind::Sparse
    } else {
        ProjectorKind::Dense
    };
    let make = |stream: u8| Projector {
        kind,
        d,
        n: n_nodes,
        seed,
        stream,
    };
    (make(1), make(2))
}

/// Projected worker payload: d x d sketches of the covariance factors plus
/// scalar plug-in parts.
#[derive(Debug, Clone)]
pub struct InferencePack {
    pub worker_id: usize,
    pub n_local: usize,
    pub d: usize,
    pub p: usize,
    pub proj_seed: u64,
    pub proj_kind: ProjectorKind,
    pub xi1_r: DMatrix<f64>,
    pub xi2_r: DMatrix<f64>,
    pub v1_r: DMatrix<f64>,
    pub v2_r: DMatrix<f64>,
    pub t1_r: DVector<f64>,
    pub t2_r: DVector<f64>,
    /// p x d.
    pub t3_r: DMatrix<f64>,
    pub sigma2_eps_part: f64,
    pub gram_quad_part: f64,
    pub byte_size: usize,
}

impl InferencePack {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.put_u32(self.worker_id as u32);
        e.put_u64(self.n_local as u64);
        e.put_u32(self.d as u32);
        e.put_u32(self.p as u32);
        e.put_u64(self.proj_seed);
        e.put_u8(self.proj_kind.tag());
        e.put_f64(self.sigma2_eps_part);
        e.put_f64(self.gram_quad_part);
        for m in [&self.xi1_r, &self.xi2_r, &self.v1_r, &self.v2_r] {
            for i in 0..self.d {
                for j in 0..self.d {
                    e.put_f64(m[(i, j)]);
                }
            }
        }
        for v in [&self.t1_r, &self.t2_r] {
            for i in 0..self.d {
                e.put_f64(v[i]);
            }
        }
        for i in 0..self.p {
            for j in 0..self.d {
                e.put_f64(self.t3_r[(i, j)]);
            }
        }
        e.finish()
    }

    fn fingerprint(&self) -> (usize, u64, u8) {
        (self.d, self.proj_seed, self.proj_kind.tag())
    }
}

/// Project one worker's factors through (R1, R2), at cost O(d * nnz).
pub fn build_pack(
    factors: &WorkerFactors,
    r1: &Projector,
    r2: &Projector,
) -> Result<InferencePack> {
    if r1.d != r2.d || r1.seed != r2.seed || r1.kind != r2.kind {
        return Err(Error::Protocol(
            "R1 and R2 must share dimension, seed and kind".into(),
        ));
    }
    if r1.n != factors.n_total {
        return Err(Error::Dimension(format!(
            "projector built for n = {}, factors for n = {}",
            r1.n, factors.n_total
        )));
    }
    let d = r1.d;
    let p = factors.p;
    let n_local = factors.n_local;

    // Gather every global row id the factors reference, generate each
    // projector column exactly once.
    let mut ids: Vec<u32> = factors.local_nodes.clone();
    for cols in [
        &factors.xi1_cols,
        &factors.b_cols,
        &factors.btilde_cols,
        &factors.c_cols,
    ] {
        for col in cols.iter() {
            ids.extend(col.iter().map(|&(g, _)| g));
        }
    }
    ids.sort_unstable();
    ids.dedup();
    let pos = |g: u32| ids.binary_search(&g).unwrap();
    let mut r1_cols = vec![0.0f64; ids.len() * d];
    let mut r2_cols = vec![0.0f64; ids.len() * d];
    for (i, &g) in ids.iter().enumerate() {
        r1.fill_column(g as usize, &mut r1_cols[i * d..(i + 1) * d]);
        r2.fill_column(g as usize, &mut r2_cols[i * d..(i + 1) * d]);
    }
    let col1 = |g: u32| -> &[f64] {
        let i = pos(g);
        &r1_cols[i * d..(i + 1) * d]
    };
    let col2 = |g: u32| -> &[f64] {
        let i = pos(g);
        &r2_cols[i * d..(i + 1) * d]
    };

    // d x N_k projections of each factor.
    let project = |cols: &[super::factors::SparseCol], use_r1: bool| -> Vec<f64> {
        let mut out = vec![0.0f64; n_local * d];
        for (a, col) in cols.iter().enumerate() {
            let dst = &mut out[a * d..(a + 1) * d];
            for &(g, v) in col {
                let src = if use_r1 { col1(g) } else { col2(g) };
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    };
    let r1_xi1 = project(&factors.xi1_cols, true);
    let r2_xi1 = project(&factors.xi1_cols, false);
    let r1_b = project(&factors.b_cols, true);
    let r1_c = project(&factors.c_cols, true);
    let r1_bt = project(&factors.btilde_cols, true);
    let r2_bt = project(&factors.btilde_cols, false);

    // Xi2 and E columns are single entries at the local nodes.
    let mut r1_xi2 = vec![0.0f64; n_local * d];
    let mut r2_xi2 = vec![0.0f64; n_local * d];
    let mut r2_e = vec![0.0f64; n_local * d];
    for (a, &g) in factors.local_nodes.iter().enumerate() {
        let dg = factors.d_local[a];
        let c1 = col1(g);
        let c2 = col2(g);
        for m in 0..d {
            r1_xi2[a * d + m] = dg * c1[m];
            r2_xi2[a * d + m] = dg * c2[m];
            r2_e[a * d + m] = c2[m];
        }
    }

    // Accumulate the d x d outer-product sums over local columns.
    let outer = |left: &[f64], right: &[f64]| -> DMatrix<f64> {
        let mut m = dmatrix_zeros(d, d);
        for a in 0..n_local {
            let la = &left[a * d..(a + 1) * d];
            let ra = &right[a * d..(a + 1) * d];
            for i in 0..d {
                let li = la[i];
                if li == 0.0 {
                    continue;
                }
                for j in 0..d {
                    m[(i, j)] += li * ra[j];
                }
            }
        }
        m
    };
    let xi1_r = outer(&r1_xi1, &r2_xi2);
    let xi2_r = outer(&r2_xi1, &r1_xi2);
    let v1_r = outer(&r1_b, &r2_e);
    let v2_r = outer(&r1_c, &r2_bt);

    let mut t1_r = DVector::zeros(d);
    let mut t2_r = DVector::zeros(d);
    let mut t3_r = DMatrix::zeros(p, d);
    for a in 0..n_local {
        let bt = &r1_bt[a * d..(a + 1) * d];
        let g = factors.g_cols.row(a);
        for m in 0..d {
            t1_r[m] += factors.phi[a] * bt[m];
            t2_r[m] += factors.psi[a] * bt[m];
            for j in 0..p {
                t3_r[(j, m)] += g[j] * bt[m];
            }
        }
    }

    let mut pack = InferencePack {
        worker_id: factors.worker_id,
        n_local,
        d,
        p,
        proj_seed: r1.seed,
        proj_kind: r1.kind,
        xi1_r,
        xi2_r,
        v1_r,
        v2_r,
        t1_r,
        t2_r,
        t3_r,
        sigma2_eps_part: factors.sigma2_eps_part,
        gram_quad_part: factors.gram_quad_part,
        byte_size: 0,
    };
    pack.byte_size = pack.encode().len();
    Ok(pack)
}

/// Pool per-pack plug-in parts.
pub fn pack_plugins(packs: &[InferencePack], alphas: &[f64]) -> VariancePlugins {
    let parts: Vec<(f64, f64)> = packs
        .iter()
        .map(|p| (p.sigma2_eps_part, p.gram_quad_part))
        .collect();
    super::pool_plugins(&parts, alphas)
}

/// Assemble the projected score covariance from the packs alone (no raw data).
pub fn sigma1_projected(
    packs: &[InferencePack],
    alphas: &[f64],
    plugins: &VariancePlugins,
    sign: CrossBlockSign,
) -> Result<DMatrix<f64>> {
    if packs.is_empty() {
        return Err(Error::Aggregation("no inference packs supplied".into()));
    }
    if packs.len() != alphas.len() {
        return Err(Error::Dimension(format!(
            "{} packs vs {} alphas",
            packs.len(),
            alphas.len()
        )));
    }
    let fp = packs[0].fingerprint();
    for pack in packs {
        if pack.fingerprint() != fp {
            return Err(Error::Protocol(format!(
                "pack from worker {} has projector fingerprint {:?}, expected {:?}",
                pack.worker_id,
                pack.fingerprint(),
                fp
            )));
        }
    }
    let p = packs[0].p;
    let d = packs[0].d;

    let products = |k: usize, l: usize| -> BlockProducts {
        let pk = &packs[k];
        let pl = &packs[l];
        let mut tr_xi = 0.0;
        let mut tr_v = 0.0;
        for i in 0..d {
            for j in 0..d {
                tr_xi += pk.xi1_r[(i, j)] * pl.xi2_r[(j, i)];
                tr_v += pk.v1_r[(i, j)] * pl.v2_r[(i, j)];
            }
        }
        let t1t2 = pk.t1_r.dot(&pl.t2_r);
        let t2t1 = pk.t2_r.dot(&pl.t1_r);
        let t1t1 = pk.t1_r.dot(&pl.t1_r);
        let mut t1_t3 = DVector::zeros(p);
        let mut t3_t1 = DVector::zeros(p);
        let mut t3_t3 = DMatrix::zeros(p, p);
        for j in 0..p {
            for m in 0..d {
                t1_t3[j] += pk.t1_r[m] * pl.t3_r[(j, m)];
                t3_t1[j] += pk.t3_r[(j, m)] * pl.t1_r[m];
            }
            for jm in 0..p {
                for m in 0..d {
                    t3_t3[(j, jm)] += pk.t3_r[(j, m)] * pl.t3_r[(jm, m)];
                }
            }
        }
        BlockProducts {
            tr_xi,
            tr_v,
            t1t2,
            t2t1,
            t1t1,
            t1_t3,
            t3_t1,
            t3_t3,
        }
    };

    let n_locals: Vec<usize> = packs.iter().map(|p| p.n_local).collect();
    Ok(assemble_sigma1(p, alphas, &n_locals, plugins, sign, products))
}
