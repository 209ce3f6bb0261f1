use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::train::{EpochRecord, TrainingRun};
use super::MetricsError;
use crate::geometry::Rect;
use crate::render::draw::{draw_line, draw_rect, draw_text, fill_rect};
use crate::render::font::text_width;

pub const CURVES_CSV: &str = "curves.csv";
pub const CURVES_PNG: &str = "curves.png";
pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

pub const TRAIN_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
pub const VAL_COLOR: Rgb<u8> = Rgb([255, 127, 14]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

const PANEL_W: u32 = 420;
const PANEL_H: u32 = 340;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveFiles {
    pub csv: PathBuf,
    pub png: PathBuf,
}

fn io_err(path: &Path, source: std::io::Error) -> MetricsError {
    MetricsError::Io { path: path.to_path_buf(), source }
}

/// Write `curves.csv` and `curves.png` into `out_dir`.
pub fn emit_curves(run: &TrainingRun, out_dir: &Path) -> Result<CurveFiles, MetricsError> {
    if run.history.is_empty() {
        return Err(MetricsError::Empty);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv = out_dir.join(CURVES_CSV);
    let mut body = format!("{CSV_HEADER}\n");
    for r in &run.history {
        body.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.8}\n",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        ));
    }
    crate::fsutil::write_atomic(&csv, body.as_bytes()).map_err(|e| io_err(&csv, e))?;

    let png = out_dir.join(CURVES_PNG);
    let img = render_curves(&run.history);
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| io_err(&png, std::io::Error::other(e)))?;
    crate::fsutil::write_atomic(&png, &bytes).map_err(|e| io_err(&png, e))?;
    Ok(CurveFiles { csv, png })
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<EpochRecord>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(MetricsError::Parse(format!("expected header {CSV_HEADER:?}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(MetricsError::Parse(format!("row {}: expected 5 fields", i + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| MetricsError::Parse(format!("row {}: {e}", i + 1)));
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|e| MetricsError::Parse(format!("row {}: {e}", i + 1)))?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                val_loss: num(f[3])?,
                val_acc: num(f[4])?,
            })
        })
        .collect()
}

struct Panel {
    origin_x: i32,
    plot: Rect,
    y_max: f64,
    epochs: usize,
}

impl Panel {
    fn point(&self, epoch: usize, v: f64) -> (i32, i32) {
        let fx = if self.epochs <= 1 { 0.5 } else { (epoch - 1) as f64 / (self.epochs - 1) as f64 };
        let fy = (v / self.y_max).clamp(0.0, 1.0);
        let x = self.plot.x as f64 + fx * (self.plot.w - 1) as f64;
        let y = (self.plot.bottom() - 1) as f64 - fy * (self.plot.h - 1) as f64;
        (x.round() as i32, y.round() as i32)
    }
}

fn fmt_tick(v: f64) -> String {
    if v >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn draw_panel(img: &mut RgbImage, origin_x: i32, title: &str, y_max: f64, series: [Vec<f64>; 2]) {
    let epochs = series[0].len();
    let plot = Rect::new(origin_x + 56, 40, PANEL_W as i32 - 76, PANEL_H as i32 - 90);
    let panel = Panel { origin_x, plot, y_max, epochs };

    let tw = text_width(title, 2) as i32;
    draw_text(img, panel.origin_x + (PANEL_W as i32 - tw) / 2, 12, title, AXIS, 2);

    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let (_, y) = panel.point(1, v);
        draw_line(img, (plot.x, y), (plot.right() - 1, y), GRID, 1);
        let label = fmt_tick(v);
        draw_text(img, plot.x - 6 - text_width(&label, 1) as i32, y - 3, &label, AXIS, 1);
    }
    let step = epochs.div_ceil(10).max(1);
    for e in (1..=epochs).step_by(step) {
        let (x, _) = panel.point(e, 0.0);
        draw_line(img, (x, plot.bottom()), (x, plot.bottom() + 3), AXIS, 1);
        let label = e.to_string();
        draw_text(img, x - text_width(&label, 1) as i32 / 2, plot.bottom() + 7, &label, AXIS, 1);
    }
    draw_text(img, plot.x + plot.w / 2 - text_width("EPOCH", 1) as i32 / 2, plot.bottom() + 18, "EPOCH", AXIS, 1);
    draw_rect(img, plot, AXIS, 1);

    for (values, color) in series.iter().zip([TRAIN_COLOR, VAL_COLOR]) {
        let pts: Vec<(i32, i32)> = values.iter().enumerate().map(|(i, &v)| panel.point(i + 1, v)).collect();
        for w in pts.windows(2) {
            draw_line(img, w[0], w[1], color, 2);
        }
        for &(x, y) in &pts {
            fill_rect(img, Rect::new(x - 2, y - 2, 5, 5), color);
        }
    }

    let ly = plot.bottom() + 32;
    fill_rect(img, Rect::new(plot.x, ly, 14, 6), TRAIN_COLOR);
    draw_text(img, plot.x + 18, ly - 1, "TRAINING", AXIS, 1);
    fill_rect(img, Rect::new(plot.x + 110, ly, 14, 6), VAL_COLOR);
    draw_text(img, plot.x + 128, ly - 1, "VALIDATION", AXIS, 1);
}

/// Two side-by-side panels: accuracy and loss, each with training and
/// validation series.
pub fn render_curves(history: &[EpochRecord]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PANEL_W * 2, PANEL_H, WHITE);
    let acc = [history.iter().map(|r| r.train_acc).collect(), history.iter().map(|r| r.val_acc).collect()];
    draw_panel(&mut img, 0, "ACCURACY", 1.0, acc);
    let loss_max = history
        .iter()
        .flat_map(|r| [r.train_loss, r.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let loss_max = if loss_max > 0.0 { loss_max * 1.1 } else { 1.0 };
    let loss = [history.iter().map(|r| r.train_loss).collect(), history.iter().map(|r| r.val_loss).collect()];
    draw_panel(&mut img, PANEL_W as i32, "LOSS", loss_max, loss);
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train_eval::Hyperparams;

    fn run(epochs: usize) -> TrainingRun {
        let history = (1..=epochs)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 1.0 / e as f64,
                train_acc: 1.0 - 0.5 / e as f64,
                val_loss: 1.2 / e as f64 + 0.01,
                val_acc: 0.95 - 0.45 / e as f64,
            })
            .collect();
        TrainingRun {
            epochs,
            history,
            seed: 1,
            hyperparams: Hyperparams::default(),
            best_epoch: epochs,
            stopped_early: false,
            backbone_frozen: true,
        }
    }

    fn count(img: &RgbImage, x0: u32, x1: u32, c: Rgb<u8>) -> usize {
        (x0..x1).flat_map(|x| (0..img.height()).map(move |y| (x, y))).filter(|&(x, y)| *img.get_pixel(x, y) == c).count()
    }

    #[test]
    fn csv_round_trip_and_plot_series() {
        let dir = tempfile::tempdir().unwrap();
        let r = run(10);
        let files = emit_curves(&r, dir.path()).unwrap();
        let back = read_curves_csv(&files.csv).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in back.iter().zip(&r.history) {
            assert_eq!(a.epoch, b.epoch);
            for (x, y) in [(a.train_loss, b.train_loss), (a.train_acc, b.train_acc), (a.val_loss, b.val_loss), (a.val_acc, b.val_acc)] {
                assert!((x - y).abs() < 5e-7);
            }
        }
        let img = image::open(&files.png).unwrap().to_rgb8();
        for (x0, x1) in [(0, PANEL_W), (PANEL_W, 2 * PANEL_W)] {
            assert!(count(&img, x0, x1, TRAIN_COLOR) > 50);
            assert!(count(&img, x0, x1, VAL_COLOR) > 50);
        }
    }

    #[test]
    fn empty_history_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_curves(&run(0), dir.path()).is_err());
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, b"x").unwrap();
        assert!(matches!(emit_curves(&run(2), &file.join("sub")), Err(MetricsError::Io { .. })));
    }

    #[test]
    fn single_epoch_renders() {
        let img = render_curves(&run(1).history);
        assert!(count(&img, 0, PANEL_W, TRAIN_COLOR) > 0);
    }
}
