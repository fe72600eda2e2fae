use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `frames` frames of `tokens_per_frame` tokens each, stored frame-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameLayout {
    pub frames: usize,
    pub tokens_per_frame: usize,
}

impl FrameLayout {
    pub fn new(frames: usize, tokens_per_frame: usize) -> Result<Self> {
        let layout = FrameLayout {
            frames,
            tokens_per_frame,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.tokens_per_frame == 0 {
            return Err(Error::invalid(format!(
                "frame layout needs frames >= 1 and tokens_per_frame >= 1, got {}x{}",
                self.frames, self.tokens_per_frame
            )));
        }
        Ok(())
    }

    /// Total token count D.
    pub fn len(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frame index of token position `pos`.
    pub fn frame_of(&self, pos: usize) -> usize {
        pos / self.tokens_per_frame
    }

    pub fn frame_range(&self, frame: usize) -> std::ops::Range<usize> {
        frame * self.tokens_per_frame..(frame + 1) * self.tokens_per_frame
    }
}

/// A D-token discrete sample with its frame layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    layout: FrameLayout,
    tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn new(layout: FrameLayout, tokens: Vec<u32>) -> Result<Self> {
        layout.validate()?;
        if tokens.len() != layout.len() {
            return Err(Error::invalid(format!(
                "sequence has {} tokens, layout {}x{} needs {}",
                tokens.len(),
                layout.frames,
                layout.tokens_per_frame,
                layout.len()
            )));
        }
        Ok(TokenSequence { layout, tokens })
    }

    pub fn layout(&self) -> FrameLayout {
        self.layout
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [u32] {
        &mut self.tokens
    }

    pub fn into_tokens(self) -> Vec<u32> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn frame(&self, frame: usize) -> &[u32] {
        &self.tokens[self.layout.frame_range(frame)]
    }

    /// Checks every token is below `k`.
    pub fn check_vocab(&self, k: usize) -> Result<()> {
        match self.tokens.iter().find(|&&v| v as usize >= k) {
            Some(v) => Err(Error::invalid(format!("token {v} outside vocabulary of size {k}"))),
            None => Ok(()),
        }
    }

    /// Frames `range` as a new sequence.
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.layout.frames {
            return Err(Error::invalid(format!(
                "frame range {range:?} outside {} frames",
                self.layout.frames
            )));
        }
        let m = self.layout.tokens_per_frame;
        let layout = FrameLayout::new(range.end - range.start, m)?;
        Ok(TokenSequence {
            layout,
            tokens: self.tokens[range.start * m..range.end * m].to_vec(),
        })
    }

    /// Appends the frames of `other` (same tokens-per-frame).
    pub fn concat(&self, other: &TokenSequence) -> Result<Self> {
        if self.layout.tokens_per_frame != other.layout.tokens_per_frame {
            return Err(Error::invalid(
                "cannot concatenate sequences with different frame widths",
            ));
        }
        let mut tokens = self.tokens.clone();
        tokens.extend_from_slice(&other.tokens);
        let layout = FrameLayout::new(self.layout.frames + other.layout.frames, self.layout.tokens_per_frame)?;
        Ok(TokenSequence { layout, tokens })
    }
}

/// One line of a dataset or samples JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub tokens: Vec<u32>,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub cond: Option<usize>,
}

impl SequenceRecord {
    pub fn new(seq: &TokenSequence, cond: Option<usize>) -> Self {
        SequenceRecord {
            tokens: seq.tokens().to_vec(),
            frames: seq.layout().frames,
            tokens_per_frame: seq.layout().tokens_per_frame,
            cond,
        }
    }

    pub fn to_sequence(&self) -> Result<TokenSequence> {
        TokenSequence::new(
            FrameLayout::new(self.frames, self.tokens_per_frame)?,
            self.tokens.clone(),
        )
    }
}
