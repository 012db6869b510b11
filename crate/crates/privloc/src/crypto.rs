//! Keyed transformations of the encryption pipeline: HMAC-based PRF, a
//! small-domain PRP over tile numbers (balanced Feistel + cycle walking),
//! per-tile rotation/flip isometries, per-tile per-axis order-preserving
//! encryption, and their composition into point/rectangle encryption.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::geometry::{self, Point, Rect};
use crate::params::{CipherOptions, OpeMode, SystemParams};

type HmacSha256 = Hmac<Sha256>;

const PRP_ROUNDS: u64 = 8;

#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey(Vec<u8>);

impl MasterKey {
    pub fn generate<R: RngCore>(rng: &mut R, lambda: u32) -> Self {
        let mut bytes = vec![0u8; (lambda / 8) as usize];
        rng.fill_bytes(&mut bytes);
        MasterKey(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        MasterKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MasterKey({} bytes)", self.0.len())
    }
}

/// The three per-backend master keys, one per tiling.
#[derive(Debug, Clone)]
pub struct KeySet {
    pub keys: [MasterKey; 3],
}

impl KeySet {
    pub fn generate<R: RngCore>(rng: &mut R, lambda: u32) -> Self {
        KeySet {
            keys: [
                MasterKey::generate(rng, lambda),
                MasterKey::generate(rng, lambda),
                MasterKey::generate(rng, lambda),
            ],
        }
    }

    /// Write the keys hex-encoded, one per line, atomically (tmp + rename)
    /// with owner-only permissions.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("keys")
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                f.set_permissions(std::fs::Permissions::from_mode(0o600))?;
            }
            for k in &self.keys {
                writeln!(f, "{}", hex::encode(k.as_bytes()))?;
            }
            f.sync_all()?;
        }
        if let Err(e) = std::fs::rename(&tmp, path) {
            let _ = std::fs::remove_file(&tmp);
            return Err(e.into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = std::fs::metadata(path)?.permissions().mode();
            if mode & 0o077 != 0 {
                return Err(Error::Config(format!(
                    "key file {} is readable by others (mode {:o}); fix with chmod 600",
                    path.display(),
                    mode & 0o777
                )));
            }
        }
        let text = std::fs::read_to_string(path)?;
        let mut keys = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let bytes = hex::decode(line.trim())
                .map_err(|e| Error::Config(format!("bad key line: {}", e)))?;
            keys.push(MasterKey::from_bytes(bytes));
        }
        let keys: [MasterKey; 3] = keys
            .try_into()
            .map_err(|_| Error::Config("key file must contain exactly 3 keys".into()))?;
        Ok(KeySet { keys })
    }
}

/// Domain-separated PRF block: HMAC-SHA256(key, label || 0x00 || parts).
fn prf_block(key: &MasterKey, label: &str, parts: &[u64], ctr: u32) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key.as_bytes()).expect("hmac accepts any key size");
    mac.update(label.as_bytes());
    mac.update(&[0u8]);
    for p in parts {
        mac.update(&p.to_be_bytes());
    }
    mac.update(&ctr.to_be_bytes());
    mac.finalize().into_bytes().into()
}

/// Pseudorandom bits for (label, parts), `bits` <= 64.
pub fn prf_bits(key: &MasterKey, label: &str, parts: &[u64], bits: u32) -> u64 {
    debug_assert!(bits <= 64);
    if bits == 0 {
        return 0;
    }
    let block = prf_block(key, label, parts, 0);
    let v = u64::from_be_bytes(block[..8].try_into().unwrap());
    v >> (64 - bits)
}

/// Arbitrary-length pseudorandom bytes via counter-mode extension.
pub fn prf_bytes(key: &MasterKey, label: &str, parts: &[u64], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len);
    let mut ctr = 0u32;
    while out.len() < out_len {
        let block = prf_block(key, label, parts, ctr);
        let take = std::cmp::min(32, out_len - out.len());
        out.extend_from_slice(&block[..take]);
        ctr += 1;
    }
    out
}

/// Keyed permutation of tile numbers in [0, domain): a balanced Feistel
/// network over an even number of bits, cycle-walked back into the domain.
pub fn prp_tile(key: &MasterKey, domain: u64, num: u64) -> Result<u64> {
    if domain < 1 {
        return Err(Error::Config("PRP domain must be >= 1".into()));
    }
    debug_assert!(num < domain, "num {} outside domain {}", num, domain);
    if domain == 1 {
        return Ok(0);
    }
    let mut n_bits = 64 - (domain - 1).leading_zeros();
    if n_bits < 2 {
        n_bits = 2;
    }
    if n_bits % 2 == 1 {
        n_bits += 1;
    }
    let half = n_bits / 2;
    let mask = (1u64 << half) - 1;

    let mut x = num;
    loop {
        let mut l = x >> half;
        let mut r = x & mask;
        for round in 0..PRP_ROUNDS {
            let f = prf_bits(key, "prp", &[round, r], half);
            let (nl, nr) = (r, l ^ f);
            l = nl;
            r = nr;
        }
        x = (l << half) | r;
        if x < domain {
            return Ok(x);
        }
    }
}

/// Rotation case table: two bits select among 0/90/180/270 degrees.
pub fn apply_rotation(bits: u8, dx: u64, dy: u64, tile_len: u64) -> (u64, u64) {
    let m = tile_len - 1;
    match bits & 0b11 {
        0b00 => (dx, dy),
        0b01 => (dy, m - dx),
        0b10 => (m - dx, m - dy),
        _ => (m - dy, dx),
    }
}

/// Flip case table: one bit mirrors the x axis.
pub fn apply_flip(bit: u8, dx: u64, dy: u64, tile_len: u64) -> (u64, u64) {
    if bit & 1 == 1 {
        (tile_len - 1 - dx, dy)
    } else {
        (dx, dy)
    }
}

pub fn rotate_tile(dx: u64, dy: u64, num: u64, key: &MasterKey, params: &SystemParams) -> (u64, u64) {
    let bits = prf_bits(key, "rotate", &[num], 2) as u8;
    apply_rotation(bits, dx, dy, params.tile_len)
}

pub fn flip_tile(dx: u64, dy: u64, num: u64, key: &MasterKey, params: &SystemParams) -> (u64, u64) {
    let bit = prf_bits(key, "flip", &[num], 1) as u8;
    apply_flip(bit, dx, dy, params.tile_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn label(self) -> &'static str {
        match self {
            Axis::X => "ope-x",
            Axis::Y => "ope-y",
        }
    }
}

/// Per-tile per-axis affine coefficients: v -> a*v + b with a >= 1 and the
/// image guaranteed inside [0, ope_range).
fn affine_coeffs(key: &MasterKey, axis: Axis, num: u64, params: &SystemParams) -> (u64, u64) {
    let l = params.tile_len;
    let r = params.ope_range;
    let m = (r - l) / l;
    let a = if m > 0 {
        1 + prf_bits(key, axis.label(), &[num, 0], 63) % m
    } else {
        1
    };
    let b_mod = r - a * (l - 1);
    let b = prf_bits(key, axis.label(), &[num, 1], 63) % b_mod;
    (a, b)
}

fn ope_piecewise(key: &MasterKey, axis: Axis, num: u64, v: u64, params: &SystemParams) -> u64 {
    let label = axis.label();
    let (mut dlo, mut dhi) = (0u64, params.tile_len);
    let (mut rlo, mut rhi) = (0u64, params.ope_range);
    // Invariant: rhi - rlo >= dhi - dlo, so every split has room.
    while dhi - dlo > 1 {
        let dm = dlo + (dhi - dlo) / 2;
        let rm_min = rlo + (dm - dlo);
        let rm_max = rhi - (dhi - dm);
        let rm = rm_min + prf_bits(key, label, &[num, dlo, dhi], 63) % (rm_max - rm_min + 1);
        if v < dm {
            dhi = dm;
            rhi = rm;
        } else {
            dlo = dm;
            rlo = rm;
        }
    }
    rlo + prf_bits(key, label, &[num, dlo, u64::MAX], 63) % (rhi - rlo)
}

/// Strictly increasing keyed map from [0, tile_len) into [0, ope_range).
pub fn ope_encrypt(
    v: u64,
    axis: Axis,
    num: u64,
    key: &MasterKey,
    params: &SystemParams,
) -> Result<u64> {
    if params.ope_range < params.tile_len {
        return Err(Error::Config("ope_range < tile_len".into()));
    }
    debug_assert!(v < params.tile_len);
    Ok(match params.ope_mode {
        OpeMode::Affine => {
            let (a, b) = affine_coeffs(key, axis, num, params);
            a * v + b
        }
        OpeMode::Piecewise => ope_piecewise(key, axis, num, v, params),
    })
}

/// Obfuscated coordinates as stored and queried by backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncryptedPoint {
    pub ex: u64,
    pub ey: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedRect {
    pub part_id: String,
    pub sw: EncryptedPoint,
    pub ne: EncryptedPoint,
}

/// Fresh opaque part identifier.
pub fn fresh_part_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Derived per-tile state, cached so steady-state encryption costs one map
/// lookup instead of a dozen HMAC evaluations.
#[derive(Clone, Copy)]
struct TileCtx {
    permuted: u64,
    rot_bits: u8,
    flip_bit: u8,
    affine_x: (u64, u64),
    affine_y: (u64, u64),
}

/// One backend's encryption pipeline: a master key plus the stage toggles.
pub struct TileCipher {
    key: MasterKey,
    params: SystemParams,
    opts: CipherOptions,
    cache: Mutex<HashMap<u64, TileCtx>>,
}

impl TileCipher {
    pub fn new(key: MasterKey, params: SystemParams) -> Self {
        Self::with_options(key, params, CipherOptions::default())
    }

    pub fn with_options(key: MasterKey, params: SystemParams, opts: CipherOptions) -> Self {
        TileCipher { key, params, opts, cache: Mutex::new(HashMap::new()) }
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    fn tile_ctx(&self, num: u64) -> Result<TileCtx> {
        if let Some(ctx) = self.cache.lock().unwrap().get(&num) {
            return Ok(*ctx);
        }
        let permuted = if self.opts.prp {
            prp_tile(&self.key, self.params.tile_count(), num)?
        } else {
            num
        };
        // Rotation, flip and OPE are keyed by the permuted tile number.
        let (rot_bits, flip_bit) = if self.opts.isometry {
            (
                prf_bits(&self.key, "rotate", &[permuted], 2) as u8,
                prf_bits(&self.key, "flip", &[permuted], 1) as u8,
            )
        } else {
            (0, 0)
        };
        let (affine_x, affine_y) = if self.opts.ope && self.params.ope_mode == OpeMode::Affine {
            (
                affine_coeffs(&self.key, Axis::X, permuted, &self.params),
                affine_coeffs(&self.key, Axis::Y, permuted, &self.params),
            )
        } else {
            ((1, 0), (1, 0))
        };
        let ctx = TileCtx { permuted, rot_bits, flip_bit, affine_x, affine_y };
        self.cache.lock().unwrap().insert(num, ctx);
        Ok(ctx)
    }

    fn ope_apply(&self, ctx: &TileCtx, axis: Axis, v: u64) -> u64 {
        if !self.opts.ope {
            return v;
        }
        match self.params.ope_mode {
            OpeMode::Affine => {
                let (a, b) = match axis {
                    Axis::X => ctx.affine_x,
                    Axis::Y => ctx.affine_y,
                };
                a * v + b
            }
            OpeMode::Piecewise => ope_piecewise(&self.key, axis, ctx.permuted, v, &self.params),
        }
    }

    /// Width of one encrypted tile slot as seen by the backend.
    pub fn slot_width(&self) -> u64 {
        if self.opts.ope {
            self.params.ope_range
        } else {
            self.params.tile_len
        }
    }

    fn compose(&self, ctx: &TileCtx, dx: u64, dy: u64) -> EncryptedPoint {
        let w = self.slot_width();
        EncryptedPoint {
            ex: (ctx.permuted % self.params.n_x) * w + dx,
            ey: (ctx.permuted / self.params.n_x) * w + dy,
        }
    }

    fn transform_local(&self, ctx: &TileCtx, dx: u64, dy: u64) -> (u64, u64) {
        let (dx, dy) = apply_rotation(ctx.rot_bits, dx, dy, self.params.tile_len);
        let (dx, dy) = apply_flip(ctx.flip_bit, dx, dy, self.params.tile_len);
        (self.ope_apply(ctx, Axis::X, dx), self.ope_apply(ctx, Axis::Y, dy))
    }

    /// Full pipeline: tile translation, tile permutation, rotation, flip,
    /// per-axis OPE, recomposition into the encrypted coordinate space.
    pub fn encrypt_point(&self, p: Point, z: u64) -> Result<EncryptedPoint> {
        let tc = geometry::coordinates_on_tile(p, z, &self.params)?;
        let ctx = self.tile_ctx(tc.num)?;
        let (dx, dy) = self.transform_local(&ctx, tc.dx, tc.dy);
        Ok(self.compose(&ctx, dx, dy))
    }

    /// Encrypt a tile-local rectangle. Rotation and flip may exchange the
    /// corner roles, so the output corners are re-normalized to sw <= ne.
    pub fn encrypt_rect(&self, num: u64, local: &Rect) -> Result<EncryptedRect> {
        let t = self.params.tile_len;
        if local.ne.x >= t || local.ne.y >= t {
            return Err(Error::Validation(format!(
                "local rect ({},{})-({},{}) crosses the tile boundary; split first",
                local.sw.x, local.sw.y, local.ne.x, local.ne.y
            )));
        }
        let ctx = self.tile_ctx(num)?;
        let (ax, ay) = self.transform_local(&ctx, local.sw.x, local.sw.y);
        let (bx, by) = self.transform_local(&ctx, local.ne.x, local.ne.y);
        let sw = self.compose(&ctx, ax.min(bx), ay.min(by));
        let ne = self.compose(&ctx, ax.max(bx), ay.max(by));
        Ok(EncryptedRect { part_id: fresh_part_id(), sw, ne })
    }
}
