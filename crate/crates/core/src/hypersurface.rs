//! Weighted homogeneous and Brieskorn–Pham hypersurface links.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: Vec<u64>,
    pub coefficient: f64,
}

/// A polynomial in `z₀,…,z_m` with positive weights of gcd 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPolynomial {
    weights: Vec<u64>,
    monomials: Vec<Monomial>,
}

impl WeightedPolynomial {
    pub fn new(weights: Vec<u64>, monomials: Vec<Monomial>) -> Result<Self> {
        if weights.is_empty() || weights.contains(&0) {
            return domain("weights must be positive");
        }
        if weights.iter().fold(0, |a, &b| num::integer::gcd(a, b)) != 1 {
            return domain(format!("weights {weights:?} do not have gcd 1"));
        }
        for mono in &monomials {
            if mono.exponents.len() != weights.len() {
                return domain("monomial length differs from the number of weights");
            }
            if mono.coefficient == 0.0 || !mono.coefficient.is_finite() {
                return domain("coefficients must be finite and nonzero");
            }
        }
        Ok(Self { weights, monomials })
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    /// `|w| = Σ w_j`.
    pub fn weight_sum(&self) -> u64 {
        self.weights.iter().sum()
    }

    fn degree_of(&self, m: &Monomial) -> u64 {
        m.exponents.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }
}

/// Degree of the first monomial, and whether every monomial shares it.
pub fn weighted_degree(p: &WeightedPolynomial) -> Result<(u64, bool)> {
    let Some(first) = p.monomials.first() else {
        return domain("empty polynomial");
    };
    let d = p.degree_of(first);
    Ok((d, p.monomials.iter().all(|m| p.degree_of(m) == d)))
}

/// The link carries a Calabi–Yau cone metric candidate iff `d < |w|`.
pub fn cy_link_condition(p: &WeightedPolynomial) -> Result<bool> {
    let (d, homogeneous) = weighted_degree(p)?;
    if !homogeneous {
        return Err(Error::Precondition("polynomial is not weighted homogeneous".into()));
    }
    Ok(d < p.weight_sum())
}

/// `f = Σ z_j^{a_j}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrieskornPham {
    exponents: Vec<u64>,
}

impl BrieskornPham {
    pub fn new(exponents: Vec<u64>) -> Result<Self> {
        if exponents.len() < 2 || exponents.iter().any(|&a| a < 2) {
            return domain("need at least two exponents, each at least 2");
        }
        Ok(Self { exponents })
    }

    pub fn exponents(&self) -> &[u64] {
        &self.exponents
    }

    /// Weights `w_j = L / a_j` with `L = lcm(a)`, reduced to gcd 1.
    pub fn to_polynomial(&self) -> WeightedPolynomial {
        let l = self.exponents.iter().fold(1, |acc, &a| num::integer::lcm(acc, a));
        let raw: Vec<u64> = self.exponents.iter().map(|a| l / a).collect();
        let g = raw.iter().fold(0, |a, &b| num::integer::gcd(a, b));
        let weights: Vec<u64> = raw.iter().map(|w| w / g).collect();
        let n = weights.len();
        let monomials = self
            .exponents
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let mut e = vec![0; n];
                e[j] = a;
                Monomial { exponents: e, coefficient: 1.0 }
            })
            .collect();
        WeightedPolynomial { weights, monomials }
    }
}

/// Discrepancy `m − mult` of the exceptional divisor when blowing up the
/// origin of a hypersurface in `ℂ^{m+1}` of multiplicity `mult`; the step is
/// crepant iff this is `≤ 0`, i.e. `mult ≥ m`.
pub fn blowup_discrepancy(m: u64, multiplicity: u64) -> i64 {
    m as i64 - multiplicity as i64
}

/// Discrepancies along the chain for `z₀^m+…+z_{m−1}^m+z_m^k`: each blow-up
/// lowers `k` by `m`, and the multiplicity is `min(m, k)`.
pub fn bp_blowup_discrepancies(m: u64, k: u64) -> Vec<i64> {
    let mut out = Vec::new();
    let mut kk = k;
    while kk >= m && m > 0 {
        out.push(blowup_discrepancy(m, m.min(kk)));
        kk -= m;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpRecord {
    pub m: u64,
    pub k: u64,
    pub se_ok: bool,
    /// The sufficient criterion `k ≡ 0, 1 (mod m)` holds. False means only
    /// that the criterion is not met.
    pub resolvable: bool,
    pub blowup_count: u64,
    pub family_count: Option<u64>,
}

/// Admissibility of `z₀^m+…+z_{m−1}^m+z_m^k`.
pub fn bp_crepant_chain(m: u64, k: u64) -> BpRecord {
    let se_ok = k > m * (m - 1);
    let resolvable = k % m <= 1;
    let discrepancies = bp_blowup_discrepancies(m, k);
    debug_assert!(discrepancies.iter().all(|&d| d <= 0));
    let blowup_count = discrepancies.len() as u64;
    BpRecord {
        m,
        k,
        se_ok,
        resolvable,
        blowup_count,
        family_count: (se_ok && resolvable).then_some(blowup_count),
    }
}

pub const BP_CSV_HEADER: &str = "m,k,se_ok,resolvable,blowup_count,family_count";

/// CSV table over all `(m, k)` in the given inclusive ranges, `m` outer.
pub fn bp_table_csv(ms: std::ops::RangeInclusive<u64>, ks: std::ops::RangeInclusive<u64>) -> String {
    let mut out = String::from(BP_CSV_HEADER);
    out.push('\n');
    for m in ms {
        for k in ks.clone() {
            let r = bp_crepant_chain(m, k);
            let fc = r.family_count.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{},{}\n", r.m, r.k, r.se_ok, r.resolvable, r.blowup_count, fc));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(w: &[u64], exps: &[&[u64]]) -> WeightedPolynomial {
        let monos =
            exps.iter().map(|e| Monomial { exponents: e.to_vec(), coefficient: 1.0 }).collect();
        WeightedPolynomial::new(w.to_vec(), monos).unwrap()
    }

    #[test]
    fn degrees() {
        let cubic = poly(&[1, 1, 1, 1], &[&[3, 0, 0, 0], &[0, 3, 0, 0], &[0, 0, 3, 0], &[0, 0, 0, 3]]);
        assert_eq!(weighted_degree(&cubic).unwrap(), (3, true));
        let p = poly(&[7, 7, 7, 3], &[&[3, 0, 0, 0], &[0, 3, 0, 0], &[0, 0, 3, 0], &[0, 0, 0, 7]]);
        assert_eq!(weighted_degree(&p).unwrap(), (21, true));
        let q = poly(&[1, 1], &[&[2, 0], &[0, 3]]);
        assert_eq!(weighted_degree(&q).unwrap(), (2, false));
        assert!(weighted_degree(&poly(&[1, 1], &[])).is_err());
        assert!(WeightedPolynomial::new(vec![2, 4], vec![]).is_err());
    }

    #[test]
    fn cy_condition() {
        let cubic = BrieskornPham::new(vec![3, 3, 3, 3]).unwrap().to_polynomial();
        assert!(cy_link_condition(&cubic).unwrap());
        let quartic = BrieskornPham::new(vec![4, 4, 4, 4]).unwrap().to_polynomial();
        assert!(!cy_link_condition(&quartic).unwrap());
        let p = BrieskornPham::new(vec![3, 3, 3, 7]).unwrap().to_polynomial();
        assert_eq!(p.weights(), &[7, 7, 7, 3]);
        assert!(cy_link_condition(&p).unwrap());
        let q = poly(&[1, 1], &[&[2, 0], &[0, 3]]);
        assert!(matches!(cy_link_condition(&q), Err(Error::Precondition(_))));
    }

    #[test]
    fn bp_chain() {
        let r = bp_crepant_chain(3, 7);
        assert!(r.se_ok && r.resolvable);
        assert_eq!((r.blowup_count, r.family_count), (2, Some(2)));
        assert!(!bp_crepant_chain(3, 5).se_ok);
        let r = bp_crepant_chain(3, 8);
        assert!(r.se_ok && !r.resolvable && r.family_count.is_none());
        assert_eq!(bp_blowup_discrepancies(3, 7), vec![0, 0]);
        assert_eq!(blowup_discrepancy(3, 2), 1);
    }

    #[test]
    fn csv_table() {
        let csv = bp_table_csv(3..=3, 6..=7);
        assert_eq!(csv, "m,k,se_ok,resolvable,blowup_count,family_count\n3,6,false,true,2,\n3,7,true,true,2,2\n");
    }
}
