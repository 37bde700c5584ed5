//! Instruction/answer generation over grid images.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::grid::{Cell, Color, GridConfig, GridImage, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Caption,
    Count,
    Locate,
    Compare,
}

impl TaskTag {
    pub const ALL: [TaskTag; 4] = [Self::Caption, Self::Count, Self::Locate, Self::Compare];
}

/// Fraction of samples per task tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMix {
    #[serde(default)]
    pub caption: f64,
    #[serde(default)]
    pub count: f64,
    #[serde(default)]
    pub locate: f64,
    #[serde(default)]
    pub compare: f64,
}

impl TaskMix {
    pub const CAPTION: TaskMix = TaskMix {
        caption: 1.0,
        count: 0.0,
        locate: 0.0,
        compare: 0.0,
    };
    /// Captions plus question answering.
    pub const CONVERSATION: TaskMix = TaskMix {
        caption: 0.5,
        count: 0.25,
        locate: 0.0,
        compare: 0.25,
    };
    pub const MULTITASK: TaskMix = TaskMix {
        caption: 0.25,
        count: 0.25,
        locate: 0.25,
        compare: 0.25,
    };

    pub fn weight(&self, tag: TaskTag) -> f64 {
        match tag {
            TaskTag::Caption => self.caption,
            TaskTag::Count => self.count,
            TaskTag::Locate => self.locate,
            TaskTag::Compare => self.compare,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = TaskTag::ALL.map(|t| self.weight(t));
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidMix(format!("negative or non-finite weight in {self:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMix(format!("weights sum to {total}")));
        }
        Ok(())
    }
}

/// One instruction/response record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub image: GridImage,
    pub instruction: String,
    pub response: String,
    pub tag: TaskTag,
}

/// Per-sample generator: sample `i` of a seed draws from its own stream, so
/// samples can be produced independently and in any order.
pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Splits `n` into per-tag counts proportional to `mix` (largest remainder)
/// and returns the tags in a seeded random order.
pub(crate) fn allocate_tags<T: Copy>(n: usize, weights: &[(T, f64)], seed: u64) -> Vec<T> {
    let mut counts: Vec<usize> = weights.iter().map(|&(_, w)| (w * n as f64) as usize).collect();
    let mut rest: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .map(|(i, &(_, w))| (i, w * n as f64 - counts[i] as f64))
        .collect();
    rest.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut missing = n - counts.iter().sum::<usize>();
    for (i, _) in rest {
        if missing == 0 {
            break;
        }
        if weights[i].1 > 0.0 {
            counts[i] += 1;
            missing -= 1;
        }
    }
    let mut tags: Vec<T> = weights
        .iter()
        .zip(&counts)
        .flat_map(|(&(t, _), &c)| core::iter::repeat(t).take(c))
        .collect();
    tags.shuffle(&mut sample_rng(seed, u64::MAX));
    tags
}

/// Distinct objects sorted by color then shape, joined with "and".
pub fn caption_answer(image: &GridImage) -> String {
    let objects: BTreeSet<Cell> = image.objects().map(|(_, _, c)| c).collect();
    let parts: Vec<String> = objects
        .iter()
        .map(|c| format!("{} {}", c.color.word(), c.shape.word()))
        .collect();
    parts.join(" and ")
}

/// Objects that are the only one of their color, so a locate question has
/// one answer.
fn unique_objects(image: &GridImage) -> Vec<(usize, usize, Cell)> {
    image
        .objects()
        .filter(|(_, _, c)| image.count_color(c.color) == 1)
        .collect()
}

fn pick_color<R: Rng>(image: &GridImage, rng: &mut R, present_bias: f64) -> Color {
    let present: Vec<Color> = Color::ALL.iter().copied().filter(|&c| image.has_color(c)).collect();
    if !present.is_empty() && rng.gen_bool(present_bias) {
        *present.choose(rng).unwrap()
    } else {
        Color::ALL[rng.gen_range(0..Color::ALL.len())]
    }
}

/// Draws a grid and a question of the given kind; returns the sample.
pub fn make_sample<R: Rng>(tag: TaskTag, grid: &GridConfig, rng: &mut R) -> Sample {
    loop {
        let image = grid.random_grid(rng);
        let (instruction, response) = match tag {
            TaskTag::Caption => ("describe the image".to_string(), caption_answer(&image)),
            TaskTag::Count => {
                let color = pick_color(&image, rng, 0.7);
                (
                    format!("how many {}", color.word()),
                    image.count_color(color).to_string(),
                )
            }
            TaskTag::Locate => {
                let unique = unique_objects(&image);
                let Some(&(r, c, cell)) = unique.choose(rng) else {
                    continue;
                };
                (
                    format!("where is the {} {}", cell.color.word(), cell.shape.word()),
                    format!("row {} col {}", r + 1, c + 1),
                )
            }
            TaskTag::Compare => {
                let a = pick_color(&image, rng, 1.0);
                let others: Vec<Color> = Color::ALL.iter().copied().filter(|&c| c != a).collect();
                let b = if rng.gen_bool(0.5) {
                    pick_color(&image, rng, 0.8)
                } else {
                    *others.choose(rng).unwrap()
                };
                if a == b {
                    continue;
                }
                let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                let (na, nb) = (image.count_color(a), image.count_color(b));
                let answer = match na.cmp(&nb) {
                    core::cmp::Ordering::Greater => a.word(),
                    core::cmp::Ordering::Less => b.word(),
                    core::cmp::Ordering::Equal => "same",
                };
                (
                    format!("are there more {} or {}", a.word(), b.word()),
                    answer.to_string(),
                )
            }
        };
        return Sample {
            image,
            instruction,
            response,
            tag,
        };
    }
}

/// `n` samples whose tags follow `mix`; a pure function of its arguments.
pub fn gen_samples(seed: u64, n: usize, mix: &TaskMix, grid: &GridConfig) -> Result<Vec<Sample>> {
    mix.validate()?;
    grid.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    let weights: Vec<(TaskTag, f64)> = TaskTag::ALL.iter().map(|&t| (t, mix.weight(t))).collect();
    let tags = allocate_tags(n, &weights, seed);
    Ok(tags
        .into_iter()
        .enumerate()
        .map(|(i, tag)| make_sample(tag, grid, &mut sample_rng(seed, i as u64)))
        .collect())
}

/// Grid with the given objects placed at `(row, col)`.
pub fn grid_with(grid: &GridConfig, objects: &[(usize, usize, Color, Shape)]) -> GridImage {
    let mut g = GridImage::empty(grid.rows, grid.cols);
    for &(r, c, color, shape) in objects {
        g.set(r, c, Some(Cell { color, shape }));
    }
    g
}
