//! Levenshtein alignment and pooled corpus error rates.

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("corpus error rate undefined: total reference {unit} count is zero")]
    EmptyReference { unit: &'static str },
    #[error("scoring needs at least one reference/hypothesis pair")]
    NoPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditStats {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost Levenshtein distance from `reference` to `hypothesis`,
/// with a substitution/insertion/deletion decomposition recovered by
/// backtrace. Deletions are reference symbols missing from the
/// hypothesis; insertions are extra hypothesis symbols.
pub fn edit_distance<S: Eq>(reference: &[S], hypothesis: &[S]) -> EditStats {
    let m = reference.len();
    let n = hypothesis.len();
    let w = n + 1;
    let mut dist = vec![0usize; (m + 1) * w];
    for i in 0..=m {
        dist[i * w] = i;
    }
    for j in 0..=n {
        dist[j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let best = (dist[(i - 1) * w + j - 1] + sub_cost)
                .min(dist[(i - 1) * w + j] + 1)
                .min(dist[i * w + j - 1] + 1);
            dist[i * w + j] = best;
        }
    }

    // backtrace preferring match/substitution, then deletion, then
    // insertion; any decomposition sums to the distance
    let mut i = m;
    let mut j = n;
    let mut stats = EditStats {
        distance: dist[m * w + n],
        substitutions: 0,
        insertions: 0,
        deletions: 0,
    };
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if dist[i * w + j] == dist[(i - 1) * w + j - 1] + sub_cost {
                stats.substitutions += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[i * w + j] == dist[(i - 1) * w + j] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    debug_assert_eq!(
        stats.substitutions + stats.insertions + stats.deletions,
        stats.distance
    );
    stats
}

/// Pooled corpus error rates: total edit distance over total reference
/// length, at character and whitespace-token granularity.
pub fn corpus_cer_wer(pairs: &[(String, String)]) -> Result<(f64, f64), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let mut char_edits = 0usize;
    let mut char_total = 0usize;
    let mut word_edits = 0usize;
    let mut word_total = 0usize;
    for (reference, hypothesis) in pairs {
        let rc: Vec<char> = reference.chars().collect();
        let hc: Vec<char> = hypothesis.chars().collect();
        char_edits += edit_distance(&rc, &hc).distance;
        char_total += rc.len();

        let rw: Vec<&str> = reference.split_whitespace().collect();
        let hw: Vec<&str> = hypothesis.split_whitespace().collect();
        word_edits += edit_distance(&rw, &hw).distance;
        word_total += rw.len();
    }
    if char_total == 0 {
        return Err(MetricsError::EmptyReference { unit: "character" });
    }
    if word_total == 0 {
        return Err(MetricsError::EmptyReference { unit: "word" });
    }
    Ok((
        char_edits as f64 / char_total as f64,
        word_edits as f64 / word_total as f64,
    ))
}
