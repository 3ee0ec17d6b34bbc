use super::EvalError;

/// 1 when the ground truth is ranked within the top `k`.
pub fn hit_at_k(rank: usize, k: usize) -> Result<f64, EvalError> {
    if rank < 1 {
        return Err(EvalError::InvalidRank(rank));
    }
    Ok(if rank <= k { 1.0 } else { 0.0 })
}

/// `1 / log2(rank + 1)` within the top `k`, else 0.
pub fn ndcg_at_k(rank: usize, k: usize) -> Result<f64, EvalError> {
    if rank < 1 {
        return Err(EvalError::InvalidRank(rank));
    }
    Ok(if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    })
}
