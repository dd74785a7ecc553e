//! Region proposal on the downsized detection view.
//!
//! The detection frame is first reduced by a logical-OR patch (6 wide by 3
//! tall by default, 240x180 -> 40x60 cells), then either:
//!
//! * `ccl_rp` - connected-component labeling (two-pass union-find) with a
//!   tight per-component box, mapped back to sensor resolution, or
//! * `hist_rp` - 1-D occupancy projections onto X and Y whose run
//!   cross-product forms candidate boxes. Cheaper, but a small object next
//!   to a large one inherits the large object's extent along the shared
//!   projection - kept as a reference for that failure mode.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::frame::{Frame, Representation};

/// Binary raster used by the proposers. Row-major, values 0/1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryImage {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Builds the image from a one-bit single-channel detection frame.
    pub fn from_frame(frame: &Frame) -> Result<Self> {
        if frame.repr != Representation::OneBit1Ch {
            return Err(Error::shape(format!(
                "expected a one-bit 1-channel frame, got {:?}",
                frame.repr
            )));
        }
        let mut img = BinaryImage::zeros(frame.width as usize, frame.height as usize);
        for y in 0..frame.height {
            for x in 0..frame.width {
                if frame.get(x, y, 0) != 0 {
                    img.set(x as usize, y as usize, true);
                }
            }
        }
        Ok(img)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Pixel connectivity for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    Eight,
}

/// Dense component labels: 0 = background, components numbered 1..=count in
/// first-encounter raster order.
#[derive(Debug, Clone)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<u32>,
    pub component_count: u32,
}

impl LabelMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// Union-find over provisional labels, with path compression and
/// union-by-rank.
struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            // Path halving keeps the trees flat without recursion.
            let grandparent = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grandparent;
            x = grandparent;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
    }
}

/// Reduces `img` by an OR patch of `patch_w x patch_h`. Output cell `(cx, cy)`
/// is set iff any source pixel in its patch is set. Dimensions must divide
/// exactly (240x180 with the default 6x3 patch gives 40x60).
pub fn downsample_or(img: &BinaryImage, patch_w: usize, patch_h: usize) -> Result<BinaryImage> {
    if patch_w == 0 || patch_h == 0 {
        return Err(Error::validation("patch dimensions must be positive"));
    }
    if img.width % patch_w != 0 || img.height % patch_h != 0 {
        return Err(Error::validation(format!(
            "image {}x{} not divisible by patch {patch_w}x{patch_h}",
            img.width, img.height
        )));
    }
    let out_w = img.width / patch_w;
    let out_h = img.height / patch_h;
    let mut out = BinaryImage::zeros(out_w, out_h);
    for cy in 0..out_h {
        for cx in 0..out_w {
            'patch: for py in 0..patch_h {
                for px in 0..patch_w {
                    if img.get(cx * patch_w + px, cy * patch_h + py) {
                        out.set(cx, cy, true);
                        break 'patch;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Two-pass connected-component labeling.
///
/// Pass 1 scans in raster order, assigning provisional labels from already
/// visited neighbors and recording equivalences in a union-find. Pass 2
/// resolves each pixel to its set representative and renumbers components
/// densely (1..=N) in order of first appearance.
pub fn ccl_label(img: &BinaryImage, connectivity: Connectivity) -> LabelMap {
    let w = img.width;
    let h = img.height;
    let mut provisional = vec![0u32; w * h]; // 0 = background, labels offset by 1
    let mut uf = UnionFind::new();

    for y in 0..h {
        for x in 0..w {
            if !img.get(x, y) {
                continue;
            }
            // Previously visited neighbors in raster order.
            let mut neighbor_labels = [0u32; 4];
            let mut n = 0;
            let consider = |nx: isize, ny: isize, buf: &mut [u32; 4], n: &mut usize| {
                if nx >= 0 && ny >= 0 && (nx as usize) < w {
                    let l = provisional[ny as usize * w + nx as usize];
                    if l != 0 {
                        buf[*n] = l;
                        *n += 1;
                    }
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            consider(xi - 1, yi, &mut neighbor_labels, &mut n);
            consider(xi, yi - 1, &mut neighbor_labels, &mut n);
            if connectivity == Connectivity::Eight {
                consider(xi - 1, yi - 1, &mut neighbor_labels, &mut n);
                consider(xi + 1, yi - 1, &mut neighbor_labels, &mut n);
            }
            let label = if n == 0 {
                uf.make_set() + 1
            } else {
                let first = neighbor_labels[0];
                for &other in &neighbor_labels[1..n] {
                    uf.union(first - 1, other - 1);
                }
                first
            };
            provisional[y * w + x] = label;
        }
    }

    // Pass 2: resolve to roots, then renumber densely in raster order.
    let mut dense_of_root: Vec<u32> = vec![0; uf.parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    for i in 0..w * h {
        let p = provisional[i];
        if p == 0 {
            continue;
        }
        let root = uf.find(p - 1) as usize;
        if dense_of_root[root] == 0 {
            next += 1;
            dense_of_root[root] = next;
        }
        labels[i] = dense_of_root[root];
    }
    LabelMap {
        width: w,
        height: h,
        labels,
        component_count: next,
    }
}

/// Where a proposal (or a dataset sample) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpSource {
    Gt,
    Ccl,
    Hist,
}

impl RpSource {
    pub fn name(self) -> &'static str {
        match self {
            RpSource::Gt => "gt",
            RpSource::Ccl => "ccl",
            RpSource::Hist => "hist",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gt" => Ok(RpSource::Gt),
            "ccl" => Ok(RpSource::Ccl),
            "hist" => Ok(RpSource::Hist),
            other => Err(Error::validation(format!(
                "unknown proposal source {other:?}; expected gt, ccl or hist"
            ))),
        }
    }
}

impl std::fmt::Display for RpSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A candidate object box in sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub frame_index: u32,
    pub bbox: BoundingBox,
    pub source: RpSource,
}

/// Parameters of the CCL proposer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CclParams {
    pub patch_w: usize,
    pub patch_h: usize,
    pub connectivity: Connectivity,
    /// Minimum component size in downsized cells.
    pub min_area: u32,
}

impl Default for CclParams {
    fn default() -> Self {
        CclParams {
            patch_w: 6,
            patch_h: 3,
            connectivity: Connectivity::Eight,
            min_area: 2,
        }
    }
}

/// CCL region proposal on a detection frame: downsample-OR, label, take each
/// component's tight cell box, scale back to sensor pixels and clamp.
/// Components below `min_area` cells are dropped.
pub fn ccl_rp(frame: &Frame, params: &CclParams) -> Result<Vec<Proposal>> {
    let img = BinaryImage::from_frame(frame)?;
    let down = downsample_or(&img, params.patch_w, params.patch_h)?;
    let map = ccl_label(&down, params.connectivity);

    #[derive(Clone)]
    struct Extent {
        min_x: usize,
        max_x: usize,
        min_y: usize,
        max_y: usize,
        cells: u32,
    }
    let mut extents: Vec<Option<Extent>> = vec![None; map.component_count as usize];
    for y in 0..map.height {
        for x in 0..map.width {
            let l = map.get(x, y);
            if l == 0 {
                continue;
            }
            let e = &mut extents[(l - 1) as usize];
            match e {
                None => {
                    *e = Some(Extent {
                        min_x: x,
                        max_x: x,
                        min_y: y,
                        max_y: y,
                        cells: 1,
                    })
                }
                Some(e) => {
                    e.min_x = e.min_x.min(x);
                    e.max_x = e.max_x.max(x);
                    e.min_y = e.min_y.min(y);
                    e.max_y = e.max_y.max(y);
                    e.cells += 1;
                }
            }
        }
    }

    let mut proposals = Vec::new();
    for e in extents.into_iter().flatten() {
        if e.cells < params.min_area {
            continue;
        }
        let bbox = BoundingBox::new(
            (e.min_x * params.patch_w) as i32,
            (e.min_y * params.patch_h) as i32,
            ((e.max_x - e.min_x + 1) * params.patch_w) as u32,
            ((e.max_y - e.min_y + 1) * params.patch_h) as u32,
        );
        let bbox = bbox
            .clip_to(frame.width as u32, frame.height as u32)
            .expect("cell boxes lie inside the frame");
        proposals.push(Proposal {
            frame_index: frame.index,
            bbox,
            source: RpSource::Ccl,
        });
    }
    Ok(proposals)
}

/// Parameters of the histogram proposer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistParams {
    pub patch_w: usize,
    pub patch_h: usize,
    /// Minimum projected occupancy for a row/column to count as active.
    pub threshold: u32,
    /// Minimum run length, in cells, for an active interval.
    pub min_run: usize,
}

impl Default for HistParams {
    fn default() -> Self {
        HistParams {
            patch_w: 6,
            patch_h: 3,
            threshold: 2,
            min_run: 3,
        }
    }
}

/// Finds maximal runs of indices whose projected count clears the threshold
/// and whose length is at least `min_run`. Returns `(start, len)` pairs.
fn runs(hist: &[u32], threshold: u32, min_run: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in hist.iter().chain(std::iter::once(&0)).enumerate() {
        if v >= threshold {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            if i - s >= min_run {
                out.push((s, i - s));
            }
        }
    }
    out
}

/// Histogram region proposal: project the downsized image onto X and Y,
/// threshold the projections into runs and emit the cross-product of runs as
/// boxes. Boxes whose interior holds no set cell are dropped.
///
/// When two objects share projected rows, every X-run is paired with the
/// union of their Y extents, so the smaller object's box inherits the larger
/// object's extent - the structural weakness this proposer is kept to show.
pub fn hist_rp(frame: &Frame, params: &HistParams) -> Result<Vec<Proposal>> {
    let img = BinaryImage::from_frame(frame)?;
    let down = downsample_or(&img, params.patch_w, params.patch_h)?;

    let mut col_hist = vec![0u32; down.width];
    let mut row_hist = vec![0u32; down.height];
    for y in 0..down.height {
        for x in 0..down.width {
            if down.get(x, y) {
                col_hist[x] += 1;
                row_hist[y] += 1;
            }
        }
    }
    let x_runs = runs(&col_hist, params.threshold, params.min_run);
    let y_runs = runs(&row_hist, params.threshold, params.min_run);

    let mut proposals = Vec::new();
    for &(xs, xl) in &x_runs {
        for &(ys, yl) in &y_runs {
            let occupied = (ys..ys + yl).any(|y| (xs..xs + xl).any(|x| down.get(x, y)));
            if !occupied {
                continue;
            }
            let bbox = BoundingBox::new(
                (xs * params.patch_w) as i32,
                (ys * params.patch_h) as i32,
                (xl * params.patch_w) as u32,
                (yl * params.patch_h) as u32,
            )
            .clip_to(frame.width as u32, frame.height as u32)
            .expect("run boxes lie inside the frame");
            proposals.push(Proposal {
                frame_index: frame.index,
                bbox,
                source: RpSource::Hist,
            });
        }
    }
    Ok(proposals)
}

pub const PROPOSAL_CSV_HEADER: &str = "k,x0,y0,w,h,source";

/// Writes proposals as CSV (`k` is the frame index).
pub fn write_proposals_csv(mut w: impl Write, proposals: &[Proposal]) -> Result<()> {
    writeln!(w, "{PROPOSAL_CSV_HEADER}")?;
    for p in proposals {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.frame_index, p.bbox.x0, p.bbox.y0, p.bbox.w, p.bbox.h, p.source
        )?;
    }
    Ok(())
}

/// Reads proposals written by [`write_proposals_csv`].
pub fn read_proposals_csv(r: impl BufRead) -> Result<Vec<Proposal>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("line 1", "missing proposal header"))??;
    if header.trim_end_matches('\r') != PROPOSAL_CSV_HEADER {
        return Err(Error::parse(
            "line 1",
            format!("expected header {PROPOSAL_CSV_HEADER:?}, got {header:?}"),
        ));
    }
    let mut proposals = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                format!("line {line_no}"),
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let parse = |s: &str, name: &str| -> Result<i64> {
            s.parse::<i64>().map_err(|_| {
                Error::parse(
                    format!("line {line_no}"),
                    format!("field {name} is not a valid number: {s:?}"),
                )
            })
        };
        proposals.push(Proposal {
            frame_index: parse(fields[0], "k")? as u32,
            bbox: BoundingBox::new(
                parse(fields[1], "x0")? as i32,
                parse(fields[2], "y0")? as i32,
                parse(fields[3], "w")? as u32,
                parse(fields[4], "h")? as u32,
            ),
            source: RpSource::from_name(fields[5])
                .map_err(|e| Error::parse(format!("line {line_no}"), e.to_string()))?,
        });
    }
    Ok(proposals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn detection_frame(width: u16, height: u16, pixels: &[(u16, u16)]) -> Frame {
        let mut f = Frame::zeros(0, 0, width, height, Representation::OneBit1Ch);
        for &(x, y) in pixels {
            f.set(x, y, 0, 1);
        }
        f
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryImage {
        let mut img = BinaryImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                if rng.gen::<f64>() < density {
                    img.set(x, y, true);
                }
            }
        }
        img
    }

    /// Reference labeling by BFS flood fill; used as the oracle for the
    /// union-find implementation.
    pub(crate) fn flood_fill_label(img: &BinaryImage, connectivity: Connectivity) -> LabelMap {
        let w = img.width;
        let h = img.height;
        let mut labels = vec![0u32; w * h];
        let mut next = 0u32;
        let mut queue = std::collections::VecDeque::new();
        for start_y in 0..h {
            for start_x in 0..w {
                if !img.get(start_x, start_y) || labels[start_y * w + start_x] != 0 {
                    continue;
                }
                next += 1;
                labels[start_y * w + start_x] = next;
                queue.push_back((start_x, start_y));
                while let Some((x, y)) = queue.pop_front() {
                    let neighbors: &[(isize, isize)] = match connectivity {
                        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
                        Connectivity::Eight => &[
                            (-1, -1), (0, -1), (1, -1),
                            (-1, 0), (1, 0),
                            (-1, 1), (0, 1), (1, 1),
                        ],
                    };
                    for &(dx, dy) in neighbors {
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if img.get(nx, ny) && labels[ny * w + nx] == 0 {
                            labels[ny * w + nx] = next;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
        }
        LabelMap { width: w, height: h, labels, component_count: next }
    }

    #[test]
    fn downsample_all_zero_stays_zero() {
        let img = BinaryImage::zeros(240, 180);
        let down = downsample_or(&img, 6, 3).unwrap();
        assert_eq!(down.width, 40);
        assert_eq!(down.height, 60);
        assert_eq!(down.count_ones(), 0);
    }

    #[test]
    fn downsample_single_pixel_sets_exactly_its_cell() {
        for &(x, y) in &[(0usize, 0usize), (5, 2), (3, 1)] {
            let mut img = BinaryImage::zeros(240, 180);
            img.set(x, y, true);
            let down = downsample_or(&img, 6, 3).unwrap();
            assert!(down.get(0, 0));
            assert_eq!(down.count_ones(), 1);
        }
        // A pixel in a different patch lands in a different cell.
        let mut img = BinaryImage::zeros(240, 180);
        img.set(13, 7, true);
        let down = downsample_or(&img, 6, 3).unwrap();
        assert!(down.get(2, 2));
        assert_eq!(down.count_ones(), 1);
    }

    #[test]
    fn downsample_full_image_is_full() {
        let mut img = BinaryImage::zeros(240, 180);
        for y in 0..180 {
            for x in 0..240 {
                img.set(x, y, true);
            }
        }
        let down = downsample_or(&img, 6, 3).unwrap();
        assert_eq!(down.count_ones(), 40 * 60);
    }

    #[test]
    fn downsample_rejects_nondivisible_dims() {
        let img = BinaryImage::zeros(241, 180);
        assert!(downsample_or(&img, 6, 3).is_err());
    }

    #[test]
    fn diagonal_pixels_merge_only_under_eight_connectivity() {
        let mut img = BinaryImage::zeros(8, 8);
        img.set(2, 2, true);
        img.set(3, 3, true);
        assert_eq!(ccl_label(&img, Connectivity::Eight).component_count, 1);
        assert_eq!(ccl_label(&img, Connectivity::Four).component_count, 2);
    }

    #[test]
    fn empty_image_has_no_components() {
        let img = BinaryImage::zeros(16, 16);
        assert_eq!(ccl_label(&img, Connectivity::Eight).component_count, 0);
    }

    #[test]
    fn labels_are_dense_and_in_raster_order() {
        let mut img = BinaryImage::zeros(10, 4);
        img.set(7, 0, true); // first in raster order
        img.set(1, 2, true);
        img.set(2, 2, true);
        img.set(5, 3, true);
        let map = ccl_label(&img, Connectivity::Eight);
        assert_eq!(map.component_count, 3);
        assert_eq!(map.get(7, 0), 1);
        assert_eq!(map.get(1, 2), 2);
        assert_eq!(map.get(2, 2), 2);
        assert_eq!(map.get(5, 3), 3);
    }

    /// U-shaped component: the two arms only meet at the bottom, which forces
    /// a label merge in the second pass.
    #[test]
    fn u_shape_is_one_component() {
        let mut img = BinaryImage::zeros(7, 5);
        for y in 0..4 {
            img.set(1, y, true);
            img.set(5, y, true);
        }
        for x in 1..=5 {
            img.set(x, 4, true);
        }
        let map = ccl_label(&img, Connectivity::Four);
        assert_eq!(map.component_count, 1);
    }

    #[test]
    fn union_find_matches_flood_fill_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let density = rng.gen_range(0.05..0.5);
            let img = random_image(&mut rng, 40, 60, density);
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let a = ccl_label(&img, conn);
                let b = flood_fill_label(&img, conn);
                assert_eq!(a.component_count, b.component_count);
                assert_eq!(a.labels(), b.labels());
            }
        }
    }

    #[test]
    fn ccl_rp_recovers_a_solid_blob() {
        // Solid 44x19 blob at (60, 90) on a 240x180 frame.
        let mut pixels = Vec::new();
        for y in 90..109 {
            for x in 60..104 {
                pixels.push((x, y));
            }
        }
        let frame = detection_frame(240, 180, &pixels);
        let proposals = ccl_rp(&frame, &CclParams::default()).unwrap();
        assert_eq!(proposals.len(), 1);
        let truth = BoundingBox::new(60, 90, 44, 19);
        let got = proposals[0].bbox;
        assert!(
            got.iou(&truth) >= 0.5,
            "proposal {got:?} too loose for {truth:?} (IoU {})",
            got.iou(&truth)
        );
        // The cell box must contain every blob pixel.
        assert!(got.x0 <= 60 && got.y0 <= 90 && got.x1() >= 104 && got.y1() >= 109);
    }

    #[test]
    fn ccl_rp_separates_distant_blobs_and_drops_specks() {
        let mut pixels = Vec::new();
        for y in 10..30 {
            for x in 10..40 {
                pixels.push((x, y));
            }
        }
        for y in 120..150 {
            for x in 180..220 {
                pixels.push((x, y));
            }
        }
        pixels.push((119, 60)); // single-cell speck, below min_area
        let frame = detection_frame(240, 180, &pixels);
        let proposals = ccl_rp(&frame, &CclParams::default()).unwrap();
        assert_eq!(proposals.len(), 2);
    }

    #[test]
    fn ccl_rp_empty_frame_yields_no_proposals() {
        let frame = detection_frame(240, 180, &[]);
        assert!(ccl_rp(&frame, &CclParams::default()).unwrap().is_empty());
    }

    #[test]
    fn hist_rp_tight_on_a_single_blob() {
        let mut pixels = Vec::new();
        for y in 60..90 {
            for x in 120..168 {
                pixels.push((x, y));
            }
        }
        let frame = detection_frame(240, 180, &pixels);
        let proposals = hist_rp(&frame, &HistParams::default()).unwrap();
        assert_eq!(proposals.len(), 1);
        let truth = BoundingBox::new(120, 60, 48, 30);
        assert_eq!(proposals[0].bbox, truth);
    }

    /// Two blobs sharing rows: the histogram proposer cannot separate their
    /// vertical extents, so the small blob's box inherits the tall blob's
    /// height. This is the documented failure mode.
    #[test]
    fn hist_rp_small_object_inherits_large_extent() {
        let mut pixels = Vec::new();
        // Tall blob on the left: x in [12, 48), y in [30, 120).
        for y in 30..120 {
            for x in 12..48 {
                pixels.push((x, y));
            }
        }
        // Small blob on the right, vertically inside the tall blob's rows:
        // x in [180, 216), y in [60, 78).
        for y in 60..78 {
            for x in 180..216 {
                pixels.push((x, y));
            }
        }
        let frame = detection_frame(240, 180, &pixels);
        let proposals = hist_rp(&frame, &HistParams::default()).unwrap();
        assert_eq!(proposals.len(), 2, "one box per X-run, sharing the Y-run");
        let small_truth = BoundingBox::new(180, 60, 36, 18);
        let small = proposals
            .iter()
            .find(|p| p.bbox.x0 == 180)
            .expect("a proposal over the small blob");
        // The shared Y-run spans both blobs, so the small box is 90 px tall.
        assert_eq!(small.bbox.y0, 30);
        assert_eq!(small.bbox.h, 90);
        assert!(
            small.bbox.iou(&small_truth) < 0.5,
            "inherited extent should ruin the IoU, got {}",
            small.bbox.iou(&small_truth)
        );
        // CCL tells the two blobs apart on the same frame.
        let ccl = ccl_rp(&frame, &CclParams::default()).unwrap();
        assert_eq!(ccl.len(), 2);
        let ccl_small = ccl.iter().find(|p| p.bbox.x0 >= 170).unwrap();
        assert!(ccl_small.bbox.iou(&small_truth) >= 0.5);
    }

    #[test]
    fn hist_rp_empty_frame_yields_no_proposals() {
        let frame = detection_frame(240, 180, &[]);
        assert!(hist_rp(&frame, &HistParams::default()).unwrap().is_empty());
    }

    #[test]
    fn proposals_csv_round_trips() {
        let proposals = vec![
            Proposal { frame_index: 0, bbox: BoundingBox::new(12, 30, 36, 90), source: RpSource::Ccl },
            Proposal { frame_index: 3, bbox: BoundingBox::new(180, 30, 36, 90), source: RpSource::Hist },
        ];
        let mut buf = Vec::new();
        write_proposals_csv(&mut buf, &proposals).unwrap();
        let back = read_proposals_csv(&buf[..]).unwrap();
        assert_eq!(back, proposals);
    }

    proptest! {
        /// Downsampled cells are set iff some pixel in their patch is set.
        #[test]
        fn downsample_cell_soundness(
            pixels in proptest::collection::vec((0usize..60, 0usize..30), 0..60)
        ) {
            let mut img = BinaryImage::zeros(60, 30);
            for &(x, y) in &pixels {
                img.set(x, y, true);
            }
            let down = downsample_or(&img, 6, 3).unwrap();
            for cy in 0..10 {
                for cx in 0..10 {
                    let any = (0..3).any(|py| (0..6).any(|px| img.get(cx * 6 + px, cy * 3 + py)));
                    prop_assert_eq!(down.get(cx, cy), any);
                }
            }
        }

        /// Every set pixel keeps its component label; upscaled CCL boxes
        /// contain all of their component's source pixels.
        #[test]
        fn ccl_boxes_contain_their_pixels(
            pixels in proptest::collection::vec((0usize..48, 0usize..24), 1..80)
        ) {
            let mut frame = Frame::zeros(0, 0, 48, 24, Representation::OneBit1Ch);
            for &(x, y) in &pixels {
                frame.set(x as u16, y as u16, 0, 1);
            }
            let params = CclParams { min_area: 1, ..CclParams::default() };
            let proposals = ccl_rp(&frame, &params).unwrap();
            let img = BinaryImage::from_frame(&frame).unwrap();
            let down = downsample_or(&img, 6, 3).unwrap();
            let map = ccl_label(&down, Connectivity::Eight);
            prop_assert_eq!(proposals.len() as u32, map.component_count);
            for &(x, y) in &pixels {
                let covered = proposals.iter().any(|p| {
                    (x as i64) >= p.bbox.x0 as i64
                        && (x as i64) < p.bbox.x1()
                        && (y as i64) >= p.bbox.y0 as i64
                        && (y as i64) < p.bbox.y1()
                });
                prop_assert!(covered, "pixel ({}, {}) escaped every proposal", x, y);
            }
        }

        /// The histogram proposer never emits more boxes than X-runs x Y-runs
        /// and every box holds at least one set cell.
        #[test]
        fn hist_rp_boxes_are_occupied(
            pixels in proptest::collection::vec((0usize..48, 0usize..24), 0..80)
        ) {
            let mut frame = Frame::zeros(0, 0, 48, 24, Representation::OneBit1Ch);
            for &(x, y) in &pixels {
                frame.set(x as u16, y as u16, 0, 1);
            }
            let params = HistParams { threshold: 1, min_run: 1, ..HistParams::default() };
            let proposals = hist_rp(&frame, &params).unwrap();
            let img = BinaryImage::from_frame(&frame).unwrap();
            let down = downsample_or(&img, 6, 3).unwrap();
            for p in &proposals {
                let cx0 = p.bbox.x0 as usize / 6;
                let cy0 = p.bbox.y0 as usize / 3;
                let cx1 = cx0 + p.bbox.w as usize / 6;
                let cy1 = cy0 + p.bbox.h as usize / 3;
                let occupied = (cy0..cy1).any(|y| (cx0..cx1).any(|x| down.get(x, y)));
                prop_assert!(occupied);
            }
        }
    }
}
