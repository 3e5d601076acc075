//! On-disk model bundle: the background n-gram LM followed by its unigram.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use fmp_core::ngram::{BackoffNGramLM, LanguageModel, LineReader};
use fmp_core::unigram::{estimate_background_unigram, UnigramDistribution};
use fmp_core::vocab::{build_vocabulary, Corpus};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub lm: BackoffNGramLM,
    pub background: UnigramDistribution,
}

impl ModelArtifact {
    pub fn train(corpus: &Corpus, order: usize, min_count: usize, smoothing_k: f64) -> Result<Self> {
        let vocab = build_vocabulary(corpus, min_count)?.with_sentence_end();
        let lm = BackoffNGramLM::train(corpus, &vocab, order, fmp_core::ngram::DEFAULT_DISCOUNT)?;
        let background = estimate_background_unigram(corpus, &vocab, smoothing_k)?;
        Ok(ModelArtifact { lm, background })
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        self.lm.write_to(out)?;
        writeln!(out, "background {}", self.background.len())?;
        for p in self.background.probs() {
            // Display prints the shortest string that parses back to the same f64.
            writeln!(out, "{p}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
        let mut lines = LineReader::new(BufReader::new(file), path.display().to_string());
        let lm = BackoffNGramLM::read_from(&mut lines)?;
        let n: usize = lines.keyed("background")?;
        if n != lm.vocab().len() {
            return Err(lines
                .error(format!("background has {n} entries but the vocabulary has {}", lm.vocab().len()))
                .into());
        }
        let mut probs = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines.next_line()?;
            probs.push(line.parse::<f64>().map_err(|_| lines.error(format!("bad probability {line:?}")))?);
        }
        let background = UnigramDistribution::new(probs).map_err(|e| lines.error(e.to_string()))?;
        Ok(ModelArtifact { lm, background })
    }
}
