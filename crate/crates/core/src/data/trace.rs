use std::ops::Range;

use crate::error::{Error, Result};

/// One user's binary presence matrix over (ROI x timeslot).
///
/// Row 0 is the null ROI. Only non-null presence is stored, slot by slot
/// (compressed by column); the null bit of a slot is set exactly when the
/// slot holds no other ROI, so the null-ROI rule holds by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceMatrix {
    user_id: String,
    n_rois: usize,
    n_slots: usize,
    offsets: Vec<u32>,
    rois: Vec<u32>,
}

impl TraceMatrix {
    /// Builds a trace from `(roi, slot)` pairs. Duplicates collapse and pairs
    /// on the null row are ignored, since null presence is derived.
    pub fn from_pairs<I>(user_id: impl Into<String>, n_rois: usize, n_slots: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let user_id = user_id.into();
        let mut cells: Vec<(u32, u32)> = Vec::new();
        for (roi, slot) in pairs {
            if roi >= n_rois || slot >= n_slots {
                return Err(Error::shape(
                    format!("cell inside {n_rois} x {n_slots}"),
                    format!("({roi}, {slot}) for user `{user_id}`"),
                ));
            }
            if roi != 0 {
                cells.push((slot as u32, roi as u32));
            }
        }
        cells.sort_unstable();
        cells.dedup();
        Ok(Self::from_sorted_cells(user_id, n_rois, n_slots, &cells))
    }

    /// `cells` must be sorted `(slot, roi)` pairs with no duplicates and no
    /// null ROI.
    pub(crate) fn from_sorted_cells(user_id: String, n_rois: usize, n_slots: usize, cells: &[(u32, u32)]) -> Self {
        let mut offsets = Vec::with_capacity(n_slots + 1);
        let mut rois = Vec::with_capacity(cells.len());
        offsets.push(0);
        let mut it = cells.iter().peekable();
        for slot in 0..n_slots as u32 {
            while let Some(&&(s, r)) = it.peek() {
                if s != slot {
                    break;
                }
                rois.push(r);
                it.next();
            }
            offsets.push(rois.len() as u32);
        }
        TraceMatrix {
            user_id,
            n_rois,
            n_slots,
            offsets,
            rois,
        }
    }

    /// A trace with no presence at all (null ROI in every slot).
    pub fn empty(user_id: impl Into<String>, n_rois: usize, n_slots: usize) -> Self {
        Self::from_sorted_cells(user_id.into(), n_rois, n_slots, &[])
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Non-null ROIs present in `slot`, ascending.
    pub fn slot_rois(&self, slot: usize) -> &[u32] {
        &self.rois[self.offsets[slot] as usize..self.offsets[slot + 1] as usize]
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.offsets[slot + 1] > self.offsets[slot]
    }

    pub fn bit(&self, roi: usize, slot: usize) -> bool {
        if roi == 0 {
            !self.is_active(slot)
        } else {
            self.slot_rois(slot).binary_search(&(roi as u32)).is_ok()
        }
    }

    /// Number of set non-null bits.
    pub fn n_events(&self) -> usize {
        self.rois.len()
    }

    pub fn active_slots(&self) -> usize {
        (0..self.n_slots).filter(|&t| self.is_active(t)).count()
    }

    /// Set non-null bits as `(roi, slot)`, ordered by slot then ROI.
    pub fn events(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_slots).flat_map(move |t| self.slot_rois(t).iter().map(move |&r| (r as usize, t)))
    }

    /// Dense row-major `n_rois x n_slots` 0/1 matrix, null row included.
    pub fn to_dense(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.n_rois * self.n_slots];
        for t in 0..self.n_slots {
            if self.is_active(t) {
                for &r in self.slot_rois(t) {
                    out[r as usize * self.n_slots + t] = 1;
                }
            } else {
                out[t] = 1;
            }
        }
        out
    }

    /// Restriction to the slot range `window`, re-indexed from 0.
    pub fn window(&self, window: Range<usize>) -> TraceMatrix {
        assert!(window.end <= self.n_slots && window.start <= window.end);
        let base = self.offsets[window.start];
        let offsets = self.offsets[window.start..=window.end]
            .iter()
            .map(|o| o - base)
            .collect();
        let rois = self.rois[base as usize..self.offsets[window.end] as usize].to_vec();
        TraceMatrix {
            user_id: self.user_id.clone(),
            n_rois: self.n_rois,
            n_slots: window.len(),
            offsets,
            rois,
        }
    }

    /// Rebuilds the trace with every non-null cell mapped through `f`, which
    /// returns the new `(roi, slot)` or `None` to drop the cell.
    pub(crate) fn remap<F>(&self, n_rois: usize, n_slots: usize, mut f: F) -> TraceMatrix
    where
        F: FnMut(usize, usize) -> Option<(usize, usize)>,
    {
        let mut cells: Vec<(u32, u32)> = self
            .events()
            .filter_map(|(r, t)| f(r, t))
            .filter(|&(r, _)| r != 0)
            .map(|(r, t)| (t as u32, r as u32))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        Self::from_sorted_cells(self.user_id.clone(), n_rois, n_slots, &cells)
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_rule_holds_on_dense_form() {
        let t = TraceMatrix::from_pairs("a", 3, 4, [(1, 3), (2, 3), (2, 1)]).unwrap();
        let dense = t.to_dense();
        for slot in 0..4 {
            let active = (1..3).any(|r| dense[r * 4 + slot] == 1);
            assert_eq!(dense[slot] == 1, !active);
        }
        assert_eq!(&dense[0..4], &[1, 0, 1, 0]);
        assert_eq!(t.n_events(), 3);
        assert_eq!(t.active_slots(), 2);
    }

    #[test]
    fn window_reindexes() {
        let t = TraceMatrix::from_pairs("a", 3, 6, [(1, 0), (2, 2), (1, 4)]).unwrap();
        let w = t.window(2..5);
        assert_eq!(w.n_slots(), 3);
        assert!(w.bit(2, 0));
        assert!(w.bit(1, 2));
        assert!(w.bit(0, 1));
        assert_eq!(w.n_events(), 2);
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        assert!(TraceMatrix::from_pairs("a", 2, 2, [(2, 0)]).is_err());
        assert!(TraceMatrix::from_pairs("a", 2, 2, [(1, 2)]).is_err());
    }
}
