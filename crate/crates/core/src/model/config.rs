use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::textdata::AnswerType;

/// Which encoders feed the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Answer and image with dynamic attention.
    #[serde(rename = "full")]
    Full,
    /// Answer and image, attention replaced by the mean-pooled grid.
    #[serde(rename = "noattn")]
    NoAttention,
    /// Answer only; the image is zero.
    #[serde(rename = "a")]
    AnswerOnly,
    /// Image only; the answer code is zero.
    #[serde(rename = "i")]
    ImageOnly,
    /// Image plus a one-hot answer type instead of the answer.
    #[serde(rename = "iat")]
    ImageAnswerType,
    /// Attention driven by the decoder state alone; the answer enters only
    /// through the initial state.
    #[serde(rename = "sat")]
    SatStyle,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoAttention,
        Variant::AnswerOnly,
        Variant::ImageOnly,
        Variant::ImageAnswerType,
        Variant::SatStyle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAttention => "noattn",
            Variant::AnswerOnly => "a",
            Variant::ImageOnly => "i",
            Variant::ImageAnswerType => "iat",
            Variant::SatStyle => "sat",
        }
    }

    pub fn uses_image(self) -> bool {
        self != Variant::AnswerOnly
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::AnswerOnly | Variant::NoAttention)
    }

    /// Answer tokens are run through the answer LSTM.
    pub fn encodes_answer(self) -> bool {
        !matches!(self, Variant::ImageOnly | Variant::ImageAnswerType)
    }

    /// The answer code (or type one-hot) enters the word context `z_t`.
    pub fn answer_in_context(self) -> bool {
        !matches!(self, Variant::ImageOnly | Variant::SatStyle)
    }

    pub fn answer_in_glimpse(self) -> bool {
        self != Variant::ImageOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub embed_size: usize,
    pub mlb_dim: usize,
    pub vocab_size: usize,
    /// `[G, G, D]`.
    pub grid: [usize; 3],
    pub global_dim: usize,
    pub variant: Variant,
    pub glimpses: usize,
    /// Maximum number of emitted tokens, the final eos included.
    pub max_len: usize,
}

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_MAX_LEN: usize = 20;

impl ModelConfig {
    /// Desk-scale defaults: embedding and fusion widths equal the hidden size.
    pub fn new(
        hidden_size: usize,
        vocab_size: usize,
        grid: [usize; 3],
        global_dim: usize,
        variant: Variant,
    ) -> Self {
        ModelConfig {
            hidden_size,
            embed_size: hidden_size,
            mlb_dim: hidden_size,
            vocab_size,
            grid,
            global_dim,
            variant,
            glimpses: 1,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            self.hidden_size,
            self.embed_size,
            self.mlb_dim,
            self.grid[0],
            self.grid[1],
            self.grid[2],
            self.global_dim,
            self.max_len,
        ];
        if sizes.contains(&0) {
            return Err(ModelError::Config(format!("zero extent in {self:?}")));
        }
        if self.vocab_size <= crate::textdata::RESERVED.len() {
            return Err(ModelError::Config(format!(
                "vocabulary of {} has no ordinary tokens",
                self.vocab_size
            )));
        }
        if self.glimpses != 1 {
            return Err(ModelError::Config("only one attention glimpse is supported".into()));
        }
        Ok(())
    }

    pub fn locations(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    pub fn depth(&self) -> usize {
        self.grid[2]
    }

    /// Width of the answer code `a`.
    pub fn answer_dim(&self) -> usize {
        match self.variant {
            Variant::ImageAnswerType => AnswerType::ALL.len(),
            _ => 2 * self.hidden_size,
        }
    }
}
