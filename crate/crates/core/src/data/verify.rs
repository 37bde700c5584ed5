//! Grid-truth verifier for free-form responses.
//!
//! Works from the instruction and response text alone and shares no code with
//! the answer generator. Every color, shape and number word in a response is
//! a *mention*; each mention is judged true or false against the grid. A
//! "same" answer to a comparison is a claim but not a mention.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::grid::{Color, GridImage, Shape};
use crate::error::{Error, Result};

/// The question an instruction asks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Question {
    Caption,
    Count(Color),
    Locate(Color, Shape),
    Compare(Color, Color),
}

pub fn parse_question(instruction: &str) -> Result<Question> {
    let w: Vec<&str> = instruction.split_whitespace().collect();
    let color = |s: &str| Color::from_word(s).ok_or_else(|| Error::UnknownSymbol(s.to_string()));
    let shape = |s: &str| Shape::from_word(s).ok_or_else(|| Error::UnknownSymbol(s.to_string()));
    match w.as_slice() {
        ["describe", "the", "image"] => Ok(Question::Caption),
        ["how", "many", c] => Ok(Question::Count(color(c)?)),
        ["where", "is", "the", c, s] => Ok(Question::Locate(color(c)?, shape(s)?)),
        ["are", "there", "more", a, "or", b] => Ok(Question::Compare(color(a)?, color(b)?)),
        _ => Err(Error::InvalidConfig(format!("unrecognized instruction {instruction:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub word: String,
    pub truthful: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Verdict {
    pub mentions: Vec<Mention>,
    /// False claims that are not mentions (a wrong "same").
    pub other_false_claims: usize,
}

impl Verdict {
    pub fn false_mentions(&self) -> usize {
        self.mentions.iter().filter(|m| !m.truthful).count()
    }

    /// True when the response states anything false about the grid.
    pub fn hallucinated(&self) -> bool {
        self.false_mentions() > 0 || self.other_false_claims > 0
    }
}

fn digit(w: &str) -> Option<usize> {
    match w.as_bytes() {
        [b] if b.is_ascii_digit() => Some((b - b'0') as usize),
        _ => None,
    }
}

fn has_shape(image: &GridImage, s: Shape) -> bool {
    image.objects().any(|(_, _, c)| c.shape == s)
}

fn has_object(image: &GridImage, color: Color, s: Shape) -> bool {
    image.objects().any(|(_, _, c)| c.shape == s && c.color == color)
}

/// Judges every claim `response` makes about `image` given `instruction`.
pub fn verify(image: &GridImage, instruction: &str, response: &str) -> Result<Verdict> {
    let q = parse_question(instruction)?;
    let words: Vec<&str> = response.split_whitespace().collect();
    let mut v = Verdict::default();
    let mut mention = |w: &str, ok: bool| {
        v.mentions.push(Mention {
            word: w.to_string(),
            truthful: ok,
        })
    };
    let mut i = 0;
    let mut other_false = 0;
    while i < words.len() {
        let w = words[i];
        let prev = if i > 0 { Some(words[i - 1]) } else { None };
        if let Some(c) = Color::from_word(w) {
            match q {
                Question::Caption => {
                    mention(w, image.has_color(c));
                    if let Some(s) = words.get(i + 1).and_then(|n| Shape::from_word(n)) {
                        mention(words[i + 1], has_object(image, c, s));
                        i += 1;
                    }
                }
                Question::Compare(a, b) if c == a || c == b => {
                    let other = if c == a { b } else { a };
                    mention(w, image.count_color(c) > image.count_color(other));
                }
                _ => mention(w, image.has_color(c)),
            }
        } else if let Some(s) = Shape::from_word(w) {
            mention(w, has_shape(image, s));
        } else if let Some(d) = digit(w) {
            let ok = match q {
                Question::Count(c) => image.count_color(c) == d,
                Question::Locate(c, s) => {
                    let hits = image
                        .objects()
                        .filter(|&(_, _, o)| o.color == c && o.shape == s);
                    match prev {
                        Some("row") => hits.into_iter().any(|(r, _, _)| r + 1 == d),
                        Some("col") => hits.into_iter().any(|(_, col, _)| col + 1 == d),
                        _ => false,
                    }
                }
                _ => false,
            };
            mention(w, ok);
        } else if w == "same" {
            if let Question::Compare(a, b) = q {
                if image.count_color(a) != image.count_color(b) {
                    other_false += 1;
                }
            }
        }
        i += 1;
    }
    v.other_false_claims = other_false;
    Ok(v)
}
