//! Viola-Jones boosted cascade of Haar-like features.
//!
//! Evaluation follows OpenCV's `CascadeClassifier` for HAAR/BOOST cascades:
//! an image pyramid with a fixed base window, feature sums normalized by the
//! window's standard deviation over an inner rectangle, ordered decision
//! trees per weak classifier, and `groupRectangles` style merging. Cascades
//! are read from and written to OpenCV's XML format.

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use rayon::prelude::*;

use super::LiveError;
use crate::geometry::Rect;

/// Rectangle sums in O(1) from a (w+1)x(h+1) table.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<i64>,
    sqsum: Vec<i64>,
}

impl IntegralImage {
    pub fn new(gray: &GrayImage) -> Self {
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let stride = w + 1;
        let mut sum = vec![0i64; stride * (h + 1)];
        let mut sqsum = vec![0i64; stride * (h + 1)];
        let raw = gray.as_raw();
        for y in 0..h {
            let (mut row, mut row_sq) = (0i64, 0i64);
            for x in 0..w {
                let v = raw[y * w + x] as i64;
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sqsum[(y + 1) * stride + x + 1] = sqsum[y * stride + x + 1] + row_sq;
            }
        }
        IntegralImage { width: w, height: h, sum, sqsum }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn table(t: &[i64], stride: usize, x: usize, y: usize, w: usize, h: usize) -> i64 {
        t[(y + h) * stride + x + w] - t[y * stride + x + w] - t[(y + h) * stride + x] + t[y * stride + x]
    }

    #[inline]
    pub fn rect_sum(&self, x: usize, y: usize, w: usize, h: usize) -> i64 {
        Self::table(&self.sum, self.width + 1, x, y, w, h)
    }

    #[inline]
    pub fn rect_sqsum(&self, x: usize, y: usize, w: usize, h: usize) -> i64 {
        Self::table(&self.sqsum, self.width + 1, x, y, w, h)
    }
}

/// Luma with the usual 0.299/0.587/0.114 weights.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y);
        let v = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
        image::Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRect {
    pub x: u8,
    pub y: u8,
    pub w: u8,
    pub h: u8,
    pub weight: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarFeature {
    pub rects: Vec<WeightedRect>,
}

impl HaarFeature {
    #[inline]
    pub fn raw(&self, ii: &IntegralImage, ox: usize, oy: usize) -> f64 {
        self.rects
            .iter()
            .map(|r| r.weight as f64 * ii.rect_sum(ox + r.x as usize, oy + r.y as usize, r.w as usize, r.h as usize) as f64)
            .sum()
    }
}

/// One node of a weak classifier tree. Children `<= 0` index leaves by `-child`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub left: i32,
    pub right: i32,
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub nodes: Vec<TreeNode>,
    pub leaves: Vec<f64>,
}

impl WeakClassifier {
    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Self {
        WeakClassifier { nodes: vec![TreeNode { left: 0, right: -1, feature, threshold }], leaves: vec![left, right] }
    }

    #[inline]
    fn eval(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut idx = 0i32;
        loop {
            let node = &self.nodes[idx as usize];
            let next = if value(node.feature) < node.threshold { node.left } else { node.right };
            if next <= 0 {
                return self.leaves[(-next) as usize];
            }
            idx = next;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub threshold: f64,
    pub weak: Vec<WeakClassifier>,
}

/// Parameters for multi-scale detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    pub min_size: u32,
    pub max_size: Option<u32>,
    /// Windows flatter than this standard deviation (grey levels) are rejected.
    pub min_std: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams { scale_factor: 1.1, min_neighbors: 3, min_size: 24, max_size: None, min_std: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub width: u32,
    pub height: u32,
    pub stages: Vec<Stage>,
    pub features: Vec<HaarFeature>,
}

const STAGE_EPS: f64 = 1e-5;

impl Cascade {
    /// Inner rectangle used for variance normalization.
    fn norm_rect(&self) -> (usize, usize, usize, usize) {
        (1, 1, self.width as usize - 2, self.height as usize - 2)
    }

    /// 1 / (area * std) over the normalization rectangle, or None for a flat window.
    pub fn inv_norm(&self, ii: &IntegralImage, x: usize, y: usize, min_std: f64) -> Option<f64> {
        let (nx, ny, nw, nh) = self.norm_rect();
        let area = (nw * nh) as f64;
        let s = ii.rect_sum(x + nx, y + ny, nw, nh) as f64;
        let sq = ii.rect_sqsum(x + nx, y + ny, nw, nh) as f64;
        let nf = area * sq - s * s;
        let std = if nf > 0.0 { nf.sqrt() / area } else { 0.0 };
        if std < min_std {
            return None;
        }
        Some(1.0 / nf.sqrt())
    }

    /// Stage reached by the window at (x, y): `stages.len()` means accepted.
    pub fn evaluate(&self, ii: &IntegralImage, x: usize, y: usize, min_std: f64) -> usize {
        let Some(inv) = self.inv_norm(ii, x, y, min_std) else { return 0 };
        let value = |f: usize| self.features[f].raw(ii, x, y) * inv;
        for (si, stage) in self.stages.iter().enumerate() {
            let sum: f64 = stage.weak.iter().map(|w| w.eval(value)).sum();
            if sum < stage.threshold - STAGE_EPS {
                return si;
            }
        }
        self.stages.len()
    }

    pub fn accepts(&self, ii: &IntegralImage, x: usize, y: usize, min_std: f64) -> bool {
        self.evaluate(ii, x, y, min_std) == self.stages.len()
    }

    /// Raw accepted windows over an image pyramid, in original coordinates.
    pub fn detect_raw(&self, gray: &GrayImage, params: &DetectParams) -> Vec<Rect> {
        let (iw, ih) = gray.dimensions();
        let mut out = Vec::new();
        let mut factor = 1.0f64;
        loop {
            let win_w = (self.width as f64 * factor).round() as u32;
            let win_h = (self.height as f64 * factor).round() as u32;
            let lw = (iw as f64 / factor).round() as u32;
            let lh = (ih as f64 / factor).round() as u32;
            if lw < self.width || lh < self.height || win_w > iw || win_h > ih {
                break;
            }
            if params.max_size.is_some_and(|m| win_w > m || win_h > m) {
                break;
            }
            if win_w >= params.min_size && win_h >= params.min_size {
                let level =
                    if factor == 1.0 { gray.clone() } else { image::imageops::resize(gray, lw, lh, FilterType::Triangle) };
                let ii = IntegralImage::new(&level);
                let step = if factor > 2.0 { 1 } else { 2 };
                let max_y = (lh - self.height) as usize;
                let max_x = (lw - self.width) as usize;
                let rows: Vec<Rect> = (0..=max_y / step)
                    .into_par_iter()
                    .map(|i| i * step)
                    .flat_map_iter(|y| {
                        let ii = &ii;
                        (0..=max_x).step_by(step).filter(move |&x| self.accepts(ii, x, y, params.min_std)).map(move |x| {
                            Rect::new(
                                (x as f64 * factor).round() as i32,
                                (y as f64 * factor).round() as i32,
                                win_w as i32,
                                win_h as i32,
                            )
                        })
                    })
                    .collect();
                out.extend(rows);
            }
            factor *= params.scale_factor;
        }
        out
    }

    /// Grouped detections with their neighbor counts.
    pub fn detect(&self, gray: &GrayImage, params: &DetectParams) -> Vec<(Rect, usize)> {
        group_rectangles(&self.detect_raw(gray, params), params.min_neighbors, 0.2)
    }
}

fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) + a.h.min(b.h)) as f64 * 0.5;
    ((a.x - b.x).abs() as f64) <= delta
        && ((a.y - b.y).abs() as f64) <= delta
        && ((a.right() - b.right()).abs() as f64) <= delta
        && ((a.bottom() - b.bottom()).abs() as f64) <= delta
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Cluster similar rectangles, average each cluster, keep clusters with more
/// than `threshold` members, and drop clusters nested in stronger ones.
pub fn group_rectangles(rects: &[Rect], threshold: usize, eps: f64) -> Vec<(Rect, usize)> {
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similar(&rects[i], &rects[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut roots: Vec<usize> = Vec::new();
    let mut sums: Vec<([i64; 4], usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let k = match roots.iter().position(|&x| x == r) {
            Some(k) => k,
            None => {
                roots.push(r);
                sums.push(([0; 4], 0));
                roots.len() - 1
            }
        };
        let s = &mut sums[k];
        s.0[0] += rects[i].x as i64;
        s.0[1] += rects[i].y as i64;
        s.0[2] += rects[i].w as i64;
        s.0[3] += rects[i].h as i64;
        s.1 += 1;
    }
    let clusters: Vec<(Rect, usize)> = sums
        .iter()
        .map(|(s, c)| {
            let avg = |v: i64| (v as f64 / *c as f64).round() as i32;
            (Rect::new(avg(s[0]), avg(s[1]), avg(s[2]), avg(s[3])), *c)
        })
        .collect();

    let mut out = Vec::new();
    for (i, &(r1, n1)) in clusters.iter().enumerate() {
        if n1 <= threshold {
            continue;
        }
        let nested = clusters.iter().enumerate().any(|(j, &(r2, n2))| {
            if j == i || n2 <= threshold {
                return false;
            }
            let dx = (r2.w as f64 * eps).round() as i32;
            let dy = (r2.h as f64 * eps).round() as i32;
            r1.x >= r2.x - dx
                && r1.y >= r2.y - dy
                && r1.right() <= r2.right() + dx
                && r1.bottom() <= r2.bottom() + dy
                && (n2 > 3.max(n1) || n1 < 3)
        });
        if !nested {
            out.push((r1, n1));
        }
    }
    out
}

fn child<'a, 'input>(node: roxmltree::Node<'a, 'input>, name: &str) -> Option<roxmltree::Node<'a, 'input>> {
    node.children().find(|c| c.is_element() && c.has_tag_name(name))
}

fn items<'a, 'input>(node: roxmltree::Node<'a, 'input>) -> impl Iterator<Item = roxmltree::Node<'a, 'input>> {
    node.children().filter(|c| c.is_element() && c.has_tag_name("_"))
}

fn text_of<'a>(node: roxmltree::Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn numbers(s: &str) -> Result<Vec<f64>, LiveError> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| LiveError::Detector(format!("bad number {t:?}: {e}"))))
        .collect()
}

impl Cascade {
    /// Parse an OpenCV `opencv-cascade-classifier` XML document (HAAR, BOOST).
    pub fn from_opencv_xml(text: &str) -> Result<Self, LiveError> {
        let err = |m: &str| LiveError::Detector(m.to_string());
        let doc = roxmltree::Document::parse(text).map_err(|e| LiveError::Detector(format!("xml: {e}")))?;
        let root = doc.root_element();
        let cascade = child(root, "cascade").ok_or_else(|| err("missing <cascade> (only the new OpenCV format is supported)"))?;
        let get = |name: &str| child(cascade, name).map(text_of).ok_or_else(|| err(&format!("missing <{name}>")));
        if get("stageType")? != "BOOST" {
            return Err(err("only BOOST stages are supported"));
        }
        if get("featureType")? != "HAAR" {
            return Err(err("only HAAR features are supported"));
        }
        let width: u32 = get("width")?.parse().map_err(|_| err("bad <width>"))?;
        let height: u32 = get("height")?.parse().map_err(|_| err("bad <height>"))?;
        if width < 3 || height < 3 || width > 255 || height > 255 {
            return Err(err("window size out of range"));
        }

        let mut features = Vec::new();
        for f in items(child(cascade, "features").ok_or_else(|| err("missing <features>"))?) {
            if child(f, "tilted").map(text_of).is_some_and(|t| t != "0") {
                return Err(err("tilted features are not supported"));
            }
            let mut rects = Vec::new();
            for r in items(child(f, "rects").ok_or_else(|| err("feature without <rects>"))?) {
                let v = numbers(text_of(r))?;
                if v.len() != 5 {
                    return Err(err("rect needs 5 numbers"));
                }
                let (x, y, w, h) = (v[0] as u32, v[1] as u32, v[2] as u32, v[3] as u32);
                if x + w > width || y + h > height {
                    return Err(err("feature rect outside the window"));
                }
                rects.push(WeightedRect { x: x as u8, y: y as u8, w: w as u8, h: h as u8, weight: v[4] as f32 });
            }
            features.push(HaarFeature { rects });
        }

        let mut stages = Vec::new();
        for s in items(child(cascade, "stages").ok_or_else(|| err("missing <stages>"))?) {
            let threshold: f64 = child(s, "stageThreshold")
                .map(text_of)
                .ok_or_else(|| err("stage without threshold"))?
                .parse()
                .map_err(|_| err("bad stageThreshold"))?;
            let mut weak = Vec::new();
            for w in items(child(s, "weakClassifiers").ok_or_else(|| err("stage without weakClassifiers"))?) {
                let nodes_raw = numbers(child(w, "internalNodes").map(text_of).unwrap_or(""))?;
                let leaves = numbers(child(w, "leafValues").map(text_of).unwrap_or(""))?;
                if nodes_raw.is_empty() || nodes_raw.len() % 4 != 0 {
                    return Err(err("internalNodes must hold groups of 4 numbers"));
                }
                let nodes: Vec<TreeNode> = nodes_raw
                    .chunks(4)
                    .map(|c| TreeNode { left: c[0] as i32, right: c[1] as i32, feature: c[2] as usize, threshold: c[3] })
                    .collect();
                for n in &nodes {
                    let bad_child = |c: i32| if c > 0 { c as usize >= nodes.len() } else { (-c) as usize >= leaves.len() };
                    if n.feature >= features.len() || bad_child(n.left) || bad_child(n.right) {
                        return Err(err("weak classifier references a missing node, leaf or feature"));
                    }
                }
                weak.push(WeakClassifier { nodes, leaves });
            }
            stages.push(Stage { threshold, weak });
        }
        if stages.is_empty() {
            return Err(err("cascade has no stages"));
        }
        Ok(Cascade { width, height, stages, features })
    }

    pub fn to_opencv_xml(&self) -> String {
        let mut s = String::new();
        s.push_str("<?xml version=\"1.0\"?>\n<opencv_storage>\n<cascade type_id=\"opencv-cascade-classifier\">\n");
        s.push_str("  <stageType>BOOST</stageType>\n  <featureType>HAAR</featureType>\n");
        s.push_str(&format!("  <height>{}</height>\n  <width>{}</width>\n", self.height, self.width));
        s.push_str(&format!("  <stageNum>{}</stageNum>\n  <stages>\n", self.stages.len()));
        for st in &self.stages {
            s.push_str(&format!(
                "    <_>\n      <maxWeakCount>{}</maxWeakCount>\n      <stageThreshold>{:e}</stageThreshold>\n      <weakClassifiers>\n",
                st.weak.len(),
                st.threshold
            ));
            for w in &st.weak {
                let nodes: Vec<String> =
                    w.nodes.iter().map(|n| format!("{} {} {} {:e}", n.left, n.right, n.feature, n.threshold)).collect();
                let leaves: Vec<String> = w.leaves.iter().map(|v| format!("{v:e}")).collect();
                s.push_str(&format!(
                    "        <_>\n          <internalNodes>{}</internalNodes>\n          <leafValues>{}</leafValues></_>\n",
                    nodes.join(" "),
                    leaves.join(" ")
                ));
            }
            s.push_str("      </weakClassifiers></_>\n");
        }
        s.push_str("  </stages>\n  <features>\n");
        for f in &self.features {
            s.push_str("    <_>\n      <rects>\n");
            for r in &f.rects {
                s.push_str(&format!("        <_>{} {} {} {} {:e}</_>\n", r.x, r.y, r.w, r.h, r.weight));
            }
            s.push_str("      </rects>\n      <tilted>0</tilted></_>\n");
        }
        s.push_str("  </features>\n</cascade>\n</opencv_storage>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_matches_direct_sum() {
        let img = GrayImage::from_fn(13, 9, |x, y| image::Luma([((x * 7 + y * 13) % 256) as u8]));
        let ii = IntegralImage::new(&img);
        for (x, y, w, h) in [(0, 0, 13, 9), (2, 3, 4, 5), (12, 8, 1, 1), (5, 0, 0, 3)] {
            let mut s = 0i64;
            let mut sq = 0i64;
            for yy in y..y + h {
                for xx in x..x + w {
                    let v = img.get_pixel(xx as u32, yy as u32)[0] as i64;
                    s += v;
                    sq += v * v;
                }
            }
            assert_eq!(ii.rect_sum(x, y, w, h), s);
            assert_eq!(ii.rect_sqsum(x, y, w, h), sq);
        }
    }

    fn toy() -> Cascade {
        // Dark top half, bright bottom half.
        let f = HaarFeature {
            rects: vec![
                WeightedRect { x: 0, y: 0, w: 24, h: 24, weight: -1.0 },
                WeightedRect { x: 0, y: 12, w: 24, h: 12, weight: 2.0 },
            ],
        };
        Cascade {
            width: 24,
            height: 24,
            stages: vec![Stage { threshold: 0.5, weak: vec![WeakClassifier::stump(0, 0.3, -1.0, 1.0)] }],
            features: vec![f],
        }
    }

    fn split_image(w: u32, h: u32, top: u8, bottom: u8, split: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |_, y| image::Luma([if y < split { top } else { bottom }]))
    }

    #[test]
    fn toy_cascade_accepts_pattern_and_rejects_flat() {
        let c = toy();
        let ii = IntegralImage::new(&split_image(24, 24, 20, 220, 12));
        assert!(c.accepts(&ii, 0, 0, 2.0));
        let ii = IntegralImage::new(&split_image(24, 24, 220, 20, 12));
        assert!(!c.accepts(&ii, 0, 0, 2.0));
        let flat = IntegralImage::new(&GrayImage::from_pixel(24, 24, image::Luma([128])));
        assert!(!c.accepts(&flat, 0, 0, 2.0));
    }

    #[test]
    fn xml_round_trip() {
        let c = toy();
        let back = Cascade::from_opencv_xml(&c.to_opencv_xml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn malformed_xml_is_rejected() {
        assert!(Cascade::from_opencv_xml("<opencv_storage/>").is_err());
        let bad = toy().to_opencv_xml().replace("0 -1 0", "0 -1 7");
        assert!(Cascade::from_opencv_xml(&bad).is_err());
        assert!(Cascade::from_opencv_xml("not xml").is_err());
    }

    #[test]
    fn grouping_merges_neighbors_and_applies_threshold() {
        let mut rects = vec![];
        for d in 0..5 {
            rects.push(Rect::new(100 + d, 100 + d, 50, 50));
        }
        rects.push(Rect::new(300, 10, 40, 40));
        let g = group_rectangles(&rects, 3, 0.2);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].0, Rect::new(102, 102, 50, 50));
        assert_eq!(g[0].1, 5);
    }

    #[test]
    fn multiscale_finds_large_pattern() {
        let c = toy();
        let img = split_image(96, 96, 30, 200, 48);
        let raw = c.detect_raw(&img, &DetectParams { min_neighbors: 0, ..Default::default() });
        assert!(raw.iter().any(|r| r.w > 60));
    }
}
