//! DE/rand/1/bin over the unit cube with greedy (elitist) selection.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
}

impl Population {
    pub fn best(&self) -> Option<(usize, f64)> {
        self.fitness
            .iter()
            .copied()
            .enumerate()
            .fold(None, |acc, (i, f)| match acc {
                Some((_, bf)) if bf >= f => acc,
                _ => Some((i, f)),
            })
    }
}

/// Three distinct indices, all different from `i`.
fn pick3<R: Rng + ?Sized>(n: usize, i: usize, rng: &mut R) -> [usize; 3] {
    let mut out = [0usize; 3];
    let mut k = 0;
    while k < 3 {
        let r = rng.random_range(0..n);
        if r != i && !out[..k].contains(&r) {
            out[k] = r;
            k += 1;
        }
    }
    out
}

/// One trial vector per member. Requires at least four members.
pub fn de_trials<R: Rng + ?Sized>(pop: &Population, f_weight: f64, crossover_rate: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let n = pop.members.len();
    assert!(n >= 4, "differential evolution needs at least 4 members");
    let d = pop.members[0].len();
    (0..n)
        .map(|i| {
            let [a, b, c] = pick3(n, i, rng);
            let (xa, xb, xc) = (&pop.members[a], &pop.members[b], &pop.members[c]);
            let jrand = rng.random_range(0..d);
            (0..d)
                .map(|j| {
                    if j == jrand || rng.random::<f64>() < crossover_rate {
                        (xa[j] + f_weight * (xb[j] - xc[j])).clamp(0.0, 1.0)
                    } else {
                        pop.members[i][j]
                    }
                })
                .collect()
        })
        .collect()
}

/// Greedy one-to-one replacement for the first `scored.len()` members.
pub fn select(pop: &mut Population, scored: Vec<(Vec<f64>, f64)>) {
    for (i, (x, f)) in scored.into_iter().enumerate() {
        if f >= pop.fitness[i] {
            pop.members[i] = x;
            pop.fitness[i] = f;
        }
    }
}

/// One generation. `eval` may repair each trial (e.g. project onto matching
/// constraints) and returns the vector actually scored with its fitness.
pub fn de_step<R, E>(pop: &Population, f_weight: f64, crossover_rate: f64, rng: &mut R, eval: E) -> Population
where
    R: Rng + ?Sized,
    E: FnOnce(Vec<Vec<f64>>) -> Vec<(Vec<f64>, f64)>,
{
    let trials = de_trials(pop, f_weight, crossover_rate, rng);
    let mut next = pop.clone();
    select(&mut next, eval(trials));
    next
}
