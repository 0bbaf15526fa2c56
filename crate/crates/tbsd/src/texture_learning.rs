//! Texture basis learning from estimated defect-free textures.
//!
//! Nonzero texture pixels are grown into connected patches along each
//! detected direction (seed-growth clustering with an l-neighborhood cone),
//! rasterized into fixed patch windows, deduplicated, and orthonormalized
//! into the dictionary used to reconstruct textures during detection.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decompose::soft_threshold_scalar;
use crate::error::{Error, Result};
use crate::quasi_detect::DirectionSet;

/// Angular half-width of the growth cone around the patch direction.
const GROWTH_CONE_DEG: f64 = 22.5;

/// Cosine similarity above which two candidate atoms collapse into one.
const DEDUP_COSINE: f64 = 0.995;

/// Gram-Schmidt drop tolerance for linearly dependent candidates (inputs
/// are unit vectors, so this is a relative tolerance).
const ORTHO_DROP_TOL: f64 = 1e-6;

/// A connected cluster of texture pixels grown along one direction.
#[derive(Debug, Clone)]
pub struct TexturePatch {
    /// `(row, col, intensity)` triples in order of absorption.
    pub pixels: Vec<(usize, usize, f64)>,
    /// Expansion direction label (radians in `[0, pi)`).
    pub direction: f64,
    /// `(min_row, min_col, max_row, max_col)` inclusive bounding box.
    pub bbox: (usize, usize, usize, usize),
}

impl TexturePatch {
    fn from_pixels(pixels: Vec<(usize, usize, f64)>, direction: f64) -> Self {
        let mut bbox = (usize::MAX, usize::MAX, 0, 0);
        for &(r, c, _) in &pixels {
            bbox.0 = bbox.0.min(r);
            bbox.1 = bbox.1.min(c);
            bbox.2 = bbox.2.max(r);
            bbox.3 = bbox.3.max(c);
        }
        Self {
            pixels,
            direction,
            bbox,
        }
    }

    /// Build a patch directly from pixel triples (test and tooling hook).
    pub fn new(pixels: Vec<(usize, usize, f64)>, direction: f64) -> Self {
        Self::from_pixels(pixels, direction)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Result of clustering: emitted patches plus the pixels that never reached
/// the emission size (together they partition the nonzero input pixels).
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub patches: Vec<TexturePatch>,
    pub leftover: Vec<(usize, usize)>,
}

/// Grow connected components of nonzero texture pixels along each detected
/// direction; a component is emitted once it reaches `k` pixels and its
/// pixels leave the working set.
pub fn knbn_cluster(
    texture: &DMatrix<f64>,
    directions: &DirectionSet,
    k: usize,
    l: usize,
) -> Result<ClusterOutcome> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "emission size K must be at least 2, got {k}"
        )));
    }
    if l < 1 {
        return Err(Error::InvalidParameter(format!(
            "neighborhood width l must be at least 1, got {l}"
        )));
    }

    let (m, n) = (texture.nrows(), texture.ncols());
    // Working set of unclaimed nonzero pixels, scanned row-major.
    let mut working = DMatrix::from_element(m, n, false);
    let mut remaining = 0usize;
    for r in 0..m {
        for c in 0..n {
            if texture[(r, c)] != 0.0 {
                working[(r, c)] = true;
                remaining += 1;
            }
        }
    }

    let mut patches = Vec::new();
    let mut leftover = Vec::new();

    // Pixels are grown along the texture extension direction (the line
    // direction); the emitted patch keeps the paired expansion direction as
    // its label.
    for (&expansion, &extension) in directions
        .expansion()
        .iter()
        .zip(directions.extension().iter())
    {
        if remaining == 0 {
            break;
        }
        let offsets = cone_offsets(extension, l);
        let mut scan = 0usize; // linear row-major scan cursor
        while remaining > 0 {
            let seed = match next_working(&working, &mut scan) {
                Some(rc) => rc,
                None => break,
            };

            let mut queue = VecDeque::new();
            let mut claimed: Vec<(usize, usize)> = Vec::new();
            queue.push_back(seed);
            working[seed] = false;
            remaining -= 1;
            claimed.push(seed);

            let mut tex: Vec<(usize, usize, f64)> = Vec::new();
            let mut emitted = false;
            while let Some((r, c)) = queue.pop_front() {
                let mut absorbed_any = false;
                for &(dr, dc) in &offsets {
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr < 0 || nc < 0 || nr >= m as isize || nc >= n as isize {
                        continue;
                    }
                    let np = (nr as usize, nc as usize);
                    if working[np] {
                        working[np] = false;
                        remaining -= 1;
                        claimed.push(np);
                        queue.push_back(np);
                        absorbed_any = true;
                    }
                }
                // A pixel joins the patch when it extends the growth or was
                // reached from it; isolated seeds with no neighbors drop out.
                if absorbed_any || !tex.is_empty() {
                    tex.push((r, c, texture[(r, c)]));
                }
                if tex.len() >= k {
                    patches.push(TexturePatch::from_pixels(tex, expansion));
                    // Unexplored queue pixels return to the working set for
                    // later seeds.
                    for p in queue.drain(..) {
                        working[p] = true;
                        remaining += 1;
                    }
                    claimed.clear();
                    emitted = true;
                    break;
                }
            }
            if !emitted {
                // Growth exhausted below the emission size.
                leftover.extend(claimed);
            }
        }
    }

    // Pixels never reached by any direction pass stay leftover.
    for r in 0..m {
        for c in 0..n {
            if working[(r, c)] {
                leftover.push((r, c));
            }
        }
    }
    Ok(ClusterOutcome { patches, leftover })
}

fn next_working(working: &DMatrix<bool>, scan: &mut usize) -> Option<(usize, usize)> {
    let (m, n) = (working.nrows(), working.ncols());
    while *scan < m * n {
        let r = *scan / n;
        let c = *scan % n;
        if working[(r, c)] {
            return Some((r, c));
        }
        *scan += 1;
    }
    // One wrap: emissions can return queue remnants behind the cursor.
    let mut idx = 0usize;
    while idx < m * n {
        let r = idx / n;
        let c = idx % n;
        if working[(r, c)] {
            *scan = idx;
            return Some((r, c));
        }
        idx += 1;
    }
    None
}

/// Chebyshev-ball offsets whose direction (mod pi) deviates from `angle` by
/// at most the growth cone half-width.
fn cone_offsets(angle: f64, l: usize) -> Vec<(isize, isize)> {
    let li = l as isize;
    let cone = GROWTH_CONE_DEG.to_radians();
    let mut offsets = Vec::new();
    for dr in -li..=li {
        for dc in -li..=li {
            if dr == 0 && dc == 0 {
                continue;
            }
            // Angle of the connecting vector, folded into [0, pi); rows grow
            // downward, matching the sampling convention elsewhere.
            let theta = (dr as f64).atan2(dc as f64).rem_euclid(PI);
            let mut dev = (theta - angle.rem_euclid(PI)).abs();
            if dev > PI / 2.0 {
                dev = PI - dev;
            }
            if dev <= cone + 1e-12 {
                offsets.push((dr, dc));
            }
        }
    }
    offsets
}

/// Orthonormal texture dictionary.
#[derive(Debug, Clone)]
pub struct TextureBasis {
    /// `p x K_t` matrix of vectorized window atoms with orthonormal columns.
    atoms: DMatrix<f64>,
    patch_shape: (usize, usize),
    /// Expansion directions (degrees) the atoms were learned from.
    directions_deg: Vec<f64>,
    source: String,
}

impl TextureBasis {
    pub fn from_parts(
        atoms: DMatrix<f64>,
        patch_shape: (usize, usize),
        directions_deg: Vec<f64>,
        source: String,
    ) -> Result<Self> {
        if atoms.ncols() == 0 {
            return Err(Error::EmptyBasis);
        }
        if atoms.nrows() != patch_shape.0 * patch_shape.1 {
            return Err(Error::DimensionMismatch(format!(
                "atoms have {} rows but the patch shape is {}x{}",
                atoms.nrows(),
                patch_shape.0,
                patch_shape.1
            )));
        }
        let gram = atoms.transpose() * &atoms;
        let eye = DMatrix::identity(gram.nrows(), gram.ncols());
        if (gram - eye).abs().max() > 1e-8 {
            return Err(Error::InvalidParameter("atoms are not orthonormal".into()));
        }
        Ok(Self {
            atoms,
            patch_shape,
            directions_deg,
            source,
        })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        self.patch_shape
    }

    pub fn directions_deg(&self) -> &[f64] {
        &self.directions_deg
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Serialize to the `.tbsd.json` texture-basis format.
    pub fn to_json(&self) -> String {
        let file = BasisFile {
            version: 1,
            patch_shape: [self.patch_shape.0, self.patch_shape.1],
            directions_deg: self.directions_deg.clone(),
            atoms: self
                .atoms
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            source: self.source.clone(),
        };
        serde_json::to_string_pretty(&file).expect("basis serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: BasisFile = serde_json::from_str(json)
            .map_err(|e| Error::InvalidParameter(format!("bad basis file: {e}")))?;
        if file.version != 1 {
            return Err(Error::InvalidParameter(format!(
                "unsupported basis file version {}",
                file.version
            )));
        }
        let p = file.patch_shape[0] * file.patch_shape[1];
        let k_t = file.atoms.len();
        if k_t == 0 {
            return Err(Error::EmptyBasis);
        }
        let mut atoms = DMatrix::zeros(p, k_t);
        for (j, atom) in file.atoms.iter().enumerate() {
            if atom.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "atom {j} has {} entries, expected {p}",
                    atom.len()
                )));
            }
            for (i, v) in atom.iter().enumerate() {
                atoms[(i, j)] = *v;
            }
        }
        Self::from_parts(
            atoms,
            (file.patch_shape[0], file.patch_shape[1]),
            file.directions_deg,
            file.source,
        )
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read basis file: {e}")))?;
        Self::from_json(&json)
    }
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    version: u32,
    patch_shape: [usize; 2],
    directions_deg: Vec<f64>,
    /// One row-major vector per atom, each of length `h * w`.
    atoms: Vec<Vec<f64>>,
    source: String,
}

/// Non-overlapping tiling of an image by patch windows; edge tiles are
/// zero-padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileLayout {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub tiles_y: usize,
    pub tiles_x: usize,
}

impl TileLayout {
    pub fn cover(image_height: usize, image_width: usize, patch_shape: (usize, usize)) -> Self {
        let (ph, pw) = patch_shape;
        Self {
            image_height,
            image_width,
            patch_height: ph,
            patch_width: pw,
            tiles_y: image_height.div_ceil(ph),
            tiles_x: image_width.div_ceil(pw),
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_y * self.tiles_x
    }

    /// Vectorized (row-major) window content of tile `(ty, tx)`,
    /// zero-padded outside the image.
    pub fn extract(&self, data: &DMatrix<f64>, ty: usize, tx: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.patch_height * self.patch_width);
        for pr in 0..self.patch_height {
            let r = ty * self.patch_height + pr;
            if r >= self.image_height {
                break;
            }
            for pc in 0..self.patch_width {
                let c = tx * self.patch_width + pc;
                if c >= self.image_width {
                    continue;
                }
                v[pr * self.patch_width + pc] = data[(r, c)];
            }
        }
        v
    }

    /// Add a vectorized window into tile `(ty, tx)` (in-bounds part only).
    pub fn add_into(&self, data: &mut DMatrix<f64>, ty: usize, tx: usize, window: &DVector<f64>) {
        for pr in 0..self.patch_height {
            let r = ty * self.patch_height + pr;
            if r >= self.image_height {
                break;
            }
            for pc in 0..self.patch_width {
                let c = tx * self.patch_width + pc;
                if c >= self.image_width {
                    continue;
                }
                data[(r, c)] += window[pr * self.patch_width + pc];
            }
        }
    }
}

/// Rasterize each patch into a window centered on its bounding box,
/// deduplicate, and orthonormalize.
pub fn build_texture_basis(
    patches: &[TexturePatch],
    patch_shape: (usize, usize),
) -> Result<TextureBasis> {
    if patches.is_empty() {
        return Err(Error::EmptyInput("build_texture_basis"));
    }
    let (ph, pw) = patch_shape;
    let mut candidates = Vec::with_capacity(patches.len());
    for patch in patches {
        let (r0, c0, r1, c1) = patch.bbox;
        let center_r = (r0 + r1) as f64 / 2.0;
        let center_c = (c0 + c1) as f64 / 2.0;
        let top = center_r - (ph as f64 - 1.0) / 2.0;
        let left = center_c - (pw as f64 - 1.0) / 2.0;
        let mut v = DVector::zeros(ph * pw);
        for &(r, c, val) in &patch.pixels {
            let pr = (r as f64 - top).round() as isize;
            let pc = (c as f64 - left).round() as isize;
            if pr < 0 || pc < 0 || pr >= ph as isize || pc >= pw as isize {
                continue;
            }
            v[pr as usize * pw + pc as usize] += val;
        }
        candidates.push((v, patch.direction));
    }
    assemble_basis(candidates, patch_shape, "bbox-centered".into())
}

/// Rasterize each patch through the detection tile grid: the patch
/// contributes its pixels to every tile window it touches, at their in-tile
/// positions. This preserves the translational phase of the texture, so the
/// dictionary spans the content of arbitrary tiles.
pub fn build_texture_basis_grid_anchored(
    patches: &[TexturePatch],
    layout: &TileLayout,
) -> Result<TextureBasis> {
    if patches.is_empty() {
        return Err(Error::EmptyInput("build_texture_basis_grid_anchored"));
    }
    let (ph, pw) = (layout.patch_height, layout.patch_width);
    let mut candidates = Vec::new();
    for patch in patches {
        use std::collections::BTreeMap;
        let mut per_tile: BTreeMap<(usize, usize), DVector<f64>> = BTreeMap::new();
        for &(r, c, val) in &patch.pixels {
            let (ty, tx) = (r / ph, c / pw);
            let window = per_tile
                .entry((ty, tx))
                .or_insert_with(|| DVector::zeros(ph * pw));
            window[(r - ty * ph) * pw + (c - tx * pw)] += val;
        }
        for (_, v) in per_tile {
            candidates.push((v, patch.direction));
        }
    }
    assemble_basis(candidates, (ph, pw), "grid-anchored".into())
}

fn assemble_basis(
    candidates: Vec<(DVector<f64>, f64)>,
    patch_shape: (usize, usize),
    source: String,
) -> Result<TextureBasis> {
    // Normalize and drop degenerate windows.
    let mut unit: Vec<(DVector<f64>, f64)> = Vec::with_capacity(candidates.len());
    for (v, dir) in candidates {
        let norm = v.norm();
        if norm > 0.0 {
            unit.push((v / norm, dir));
        }
    }
    if unit.is_empty() {
        return Err(Error::DegeneratePatches);
    }

    // Deduplicate by cosine similarity.
    let mut kept: Vec<(DVector<f64>, f64)> = Vec::new();
    for (v, dir) in unit {
        let duplicate = kept.iter().any(|(u, _)| u.dot(&v).abs() > DEDUP_COSINE);
        if !duplicate {
            kept.push((v, dir));
        }
    }

    // Modified Gram-Schmidt with re-orthogonalization (a second projection
    // pass restores orthogonality lost to roundoff on nearly dependent
    // candidates) and a drop tolerance.
    let p = patch_shape.0 * patch_shape.1;
    let mut atoms: Vec<DVector<f64>> = Vec::new();
    let mut directions = Vec::new();
    for (v, dir) in kept {
        let mut w = v;
        for _ in 0..2 {
            for a in &atoms {
                let proj = a.dot(&w);
                w -= a * proj;
            }
        }
        let norm = w.norm();
        if norm > ORTHO_DROP_TOL {
            atoms.push(w / norm);
            directions.push(dir.to_degrees());
        }
    }
    if atoms.is_empty() {
        return Err(Error::DegeneratePatches);
    }

    let mut matrix = DMatrix::zeros(p, atoms.len());
    for (j, a) in atoms.iter().enumerate() {
        matrix.set_column(j, a);
    }
    directions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    directions.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    TextureBasis::from_parts(matrix, patch_shape, directions, source)
}

/// Linear reconstruction `B_t theta_t` over the tile layout: each tile
/// receives the atom combination given by its coefficient column.
pub fn reconstruct_texture(
    basis: &TextureBasis,
    coeffs: &DMatrix<f64>,
    layout: &TileLayout,
) -> Result<DMatrix<f64>> {
    if (layout.patch_height, layout.patch_width) != basis.patch_shape() {
        return Err(Error::DimensionMismatch(
            "tile layout does not match the basis patch shape".into(),
        ));
    }
    if coeffs.nrows() != basis.atom_count() || coeffs.ncols() != layout.tile_count() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{}, expected {}x{}",
            coeffs.nrows(),
            coeffs.ncols(),
            basis.atom_count(),
            layout.tile_count()
        )));
    }
    let mut out = DMatrix::zeros(layout.image_height, layout.image_width);
    for ty in 0..layout.tiles_y {
        for tx in 0..layout.tiles_x {
            let col = ty * layout.tiles_x + tx;
            let window = basis.atoms() * coeffs.column(col);
            layout.add_into(&mut out, ty, tx, &window);
        }
    }
    Ok(out)
}

/// Per-tile projections `B_t^T v` followed by soft thresholding; the exact
/// minimizer of the texture-coefficient block under orthonormal atoms.
pub fn analyze_texture(
    residual: &DMatrix<f64>,
    basis: &TextureBasis,
    layout: &TileLayout,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    if residual.nrows() != layout.image_height || residual.ncols() != layout.image_width {
        return Err(Error::DimensionMismatch(format!(
            "residual is {}x{} but the layout covers {}x{}",
            residual.nrows(),
            residual.ncols(),
            layout.image_height,
            layout.image_width
        )));
    }
    if (layout.patch_height, layout.patch_width) != basis.patch_shape() {
        return Err(Error::DimensionMismatch(
            "tile layout does not match the basis patch shape".into(),
        ));
    }
    let mut coeffs = DMatrix::zeros(basis.atom_count(), layout.tile_count());
    for ty in 0..layout.tiles_y {
        for tx in 0..layout.tiles_x {
            let tile = layout.extract(residual, ty, tx);
            let proj = basis.atoms().transpose() * tile;
            let col = ty * layout.tiles_x + tx;
            for (i, v) in proj.iter().enumerate() {
                coeffs[(i, col)] = soft_threshold_scalar(*v, gamma / 2.0);
            }
        }
    }
    Ok(coeffs)
}
