//! Atom bookkeeping shared by imaging, planning, and the pipeline model.

use serde::{Deserialize, Serialize};

/// Which standing-wave well an atom occupies, if any. Wells are numbered
/// from the surface: Well(1) is the first intensity maximum above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WellIndex {
    /// Free-space tweezer, no membrane lattice.
    Free,
    Well(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Index of the tweezer site holding this atom.
    pub site: usize,
    pub well: WellIndex,
    pub alive: bool,
}

/// A set of atoms across the array. Sites are dense indices 0..n_sites;
/// at most one atom per site. Dead atoms stay in the roster (their history
/// matters for survival statistics) but never come back to life.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AtomEnsemble {
    atoms: Vec<Atom>,
}

impl AtomEnsemble {
    pub fn new() -> Self {
        AtomEnsemble { atoms: Vec::new() }
    }

    /// Add an atom at `site`. Panics if the site is already occupied by a
    /// living atom; loading logic must not double-fill sites.
    pub fn spawn(&mut self, site: usize, well: WellIndex) {
        assert!(
            !self.atoms.iter().any(|a| a.alive && a.site == site),
            "site {site} already occupied"
        );
        self.atoms.push(Atom {
            site,
            well,
            alive: true,
        });
    }

    /// Mark the living atom at `site` dead. Idempotent; unknown sites are
    /// ignored so loss processes can be applied blindly.
    pub fn kill_at_site(&mut self, site: usize) {
        for atom in &mut self.atoms {
            if atom.alive && atom.site == site {
                atom.alive = false;
            }
        }
    }

    /// Move the living atom at `from` to `to`. Panics if `to` is occupied.
    pub fn relocate(&mut self, from: usize, to: usize) {
        if from == to {
            return;
        }
        assert!(
            !self.atoms.iter().any(|a| a.alive && a.site == to),
            "target site {to} occupied"
        );
        for atom in &mut self.atoms {
            if atom.alive && atom.site == from {
                atom.site = to;
                return;
            }
        }
    }

    pub fn set_well(&mut self, site: usize, well: WellIndex) {
        for atom in &mut self.atoms {
            if atom.alive && atom.site == site {
                atom.well = well;
            }
        }
    }

    pub fn alive_sites(&self) -> Vec<usize> {
        let mut sites: Vec<usize> = self
            .atoms
            .iter()
            .filter(|a| a.alive)
            .map(|a| a.site)
            .collect();
        sites.sort_unstable();
        sites
    }

    pub fn n_alive(&self) -> usize {
        self.atoms.iter().filter(|a| a.alive).count()
    }

    pub fn is_occupied(&self, site: usize) -> bool {
        self.atoms.iter().any(|a| a.alive && a.site == site)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
}
