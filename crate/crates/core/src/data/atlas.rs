use std::fs;
use std::ops::Range;
use std::path::Path;

use netmae_autograd::Tensor;

use crate::error::{Error, Result};

/// Parcel → network assignment plus the network-contiguous, patch-aligned
/// column layout derived from it.
///
/// In the padded layout each network occupies one contiguous block of
/// columns: its parcels in ascending parcel id, then zero columns up to the
/// next multiple of the spatial patch width.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkAtlas {
    membership: Vec<usize>,
    names: Vec<String>,
    patch_parcels: usize,
    /// Reordered position → original parcel (no padding).
    permutation: Vec<usize>,
    pad_per_network: Vec<usize>,
    network_offset: Vec<usize>,
    network_width: Vec<usize>,
    /// Padded column → original parcel, `None` for pad columns.
    layout: Vec<Option<usize>>,
}

impl NetworkAtlas {
    pub fn new(membership: Vec<usize>, names: Vec<String>, patch_parcels: usize) -> Result<Self> {
        let n = names.len();
        if n == 0 || patch_parcels == 0 {
            return Err(Error::Invalid(
                "atlas needs at least one network and a positive patch width".into(),
            ));
        }
        if let Some((p, &id)) = membership.iter().enumerate().find(|(_, &id)| id >= n) {
            return Err(Error::Invalid(format!(
                "parcel {p} assigned to network {id}, but only {n} networks exist"
            )));
        }
        let mut counts = vec![0usize; n];
        for &id in &membership {
            counts[id] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Invalid(format!("network {empty} has no parcels")));
        }

        let mut permutation: Vec<usize> = (0..membership.len()).collect();
        permutation.sort_by_key(|&p| (membership[p], p));

        let mut pad_per_network = Vec::with_capacity(n);
        let mut network_offset = Vec::with_capacity(n);
        let mut network_width = Vec::with_capacity(n);
        let mut layout = Vec::new();
        let mut cursor = 0;
        for (net, &count) in counts.iter().enumerate() {
            let width = count.div_ceil(patch_parcels) * patch_parcels;
            pad_per_network.push(width - count);
            network_offset.push(layout.len());
            network_width.push(width);
            for &p in &permutation[cursor..cursor + count] {
                debug_assert_eq!(membership[p], net);
                layout.push(Some(p));
            }
            layout.extend(std::iter::repeat_n(None, width - count));
            cursor += count;
        }

        Ok(Self {
            membership,
            names,
            patch_parcels,
            permutation,
            pad_per_network,
            network_offset,
            network_width,
            layout,
        })
    }

    /// Builds an atlas from contiguous network sizes: parcels `0..sizes[0]`
    /// belong to network 0, and so on.
    pub fn from_sizes(sizes: &[usize], patch_parcels: usize) -> Result<Self> {
        let membership = sizes
            .iter()
            .enumerate()
            .flat_map(|(net, &s)| std::iter::repeat_n(net, s))
            .collect();
        let names = (0..sizes.len()).map(|i| format!("net{i}")).collect();
        Self::new(membership, names, patch_parcels)
    }

    /// Reads a `parcel_id<TAB>network_id<TAB>network_name` table. A leading
    /// header row starting with `parcel_id` is skipped.
    pub fn load(path: &Path, network_count: usize, patch_parcels: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, column: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        };
        let mut rows: Vec<(usize, usize, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end();
            if line.is_empty() || (i == 0 && line.starts_with("parcel_id")) {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(
                    line_no,
                    1,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let parcel: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, 1, format!("bad parcel id {:?}", fields[0])))?;
            let net: usize = fields[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, 2, format!("bad network id {:?}", fields[1])))?;
            if net >= network_count {
                return Err(parse_err(
                    line_no,
                    2,
                    format!("network id {net} out of range 0..{network_count}"),
                ));
            }
            rows.push((parcel, net, fields[2].trim().to_string()));
        }

        let c = rows.len();
        let mut membership = vec![usize::MAX; c];
        let mut names = vec![String::new(); network_count];
        for (parcel, net, name) in rows {
            if parcel >= c {
                return Err(Error::Invalid(format!(
                    "parcel id {parcel} out of range for {c} parcels"
                )));
            }
            if membership[parcel] != usize::MAX {
                return Err(Error::Invalid(format!("duplicate parcel id {parcel}")));
            }
            membership[parcel] = net;
            if names[net].is_empty() {
                names[net] = name;
            }
        }
        for (i, n) in names.iter_mut().enumerate() {
            if n.is_empty() {
                *n = format!("net{i}");
            }
        }
        Self::new(membership, names, patch_parcels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("parcel_id\tnetwork_id\tnetwork_name\n");
        for (p, &net) in self.membership.iter().enumerate() {
            out.push_str(&format!("{p}\t{net}\t{}\n", self.names[net]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn parcel_count(&self) -> usize {
        self.membership.len()
    }

    pub fn network_count(&self) -> usize {
        self.names.len()
    }

    pub fn network_name(&self, net: usize) -> &str {
        &self.names[net]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn patch_parcels(&self) -> usize {
        self.patch_parcels
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn pad_per_network(&self) -> &[usize] {
        &self.pad_per_network
    }

    /// Width of the aligned matrix, `C′`.
    pub fn padded_width(&self) -> usize {
        self.layout.len()
    }

    /// Original parcel held by each padded column.
    pub fn layout(&self) -> &[Option<usize>] {
        &self.layout
    }

    pub fn is_pad_column(&self, column: usize) -> bool {
        self.layout[column].is_none()
    }

    pub fn parcels_in(&self, net: usize) -> usize {
        self.network_width[net] - self.pad_per_network[net]
    }

    /// Spatial token columns of network `net`.
    pub fn token_columns(&self, net: usize) -> Range<usize> {
        let start = self.network_offset[net] / self.patch_parcels;
        start..start + self.network_width[net] / self.patch_parcels
    }

    pub fn token_column_count(&self) -> usize {
        self.padded_width() / self.patch_parcels
    }

    /// Network owning each spatial token column.
    pub fn column_networks(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.token_column_count());
        for net in 0..self.network_count() {
            out.extend(std::iter::repeat_n(net, self.token_columns(net).len()));
        }
        out
    }

    /// Reorders columns network-contiguously and inserts the zero pad columns.
    pub fn align(&self, values: &Tensor) -> Result<Tensor> {
        let (t, c) = values.dims2("align").map_err(|e| Error::Dimension(e.to_string()))?;
        if c != self.parcel_count() {
            return Err(Error::Dimension(format!(
                "recording has {c} parcels, atlas has {}",
                self.parcel_count()
            )));
        }
        let w = self.padded_width();
        let mut out = vec![0.0; t * w];
        let src = values.data();
        for r in 0..t {
            for (col, slot) in self.layout.iter().enumerate() {
                if let Some(p) = slot {
                    out[r * w + col] = src[r * c + p];
                }
            }
        }
        Ok(Tensor::new(&[t, w], out)?)
    }

    /// Inverse of [`align`](Self::align): drops pad columns and restores the
    /// original parcel order.
    pub fn unalign(&self, aligned: &Tensor) -> Result<Tensor> {
        let (t, w) = aligned.dims2("unalign").map_err(|e| Error::Dimension(e.to_string()))?;
        if w != self.padded_width() {
            return Err(Error::Dimension(format!(
                "aligned matrix has {w} columns, atlas layout has {}",
                self.padded_width()
            )));
        }
        let c = self.parcel_count();
        let mut out = vec![0.0; t * c];
        let src = aligned.data();
        for r in 0..t {
            for (col, slot) in self.layout.iter().enumerate() {
                if let Some(p) = slot {
                    out[r * c + p] = src[r * w + col];
                }
            }
        }
        Ok(Tensor::new(&[t, c], out)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_eight_parcels_need_no_padding() {
        let atlas = NetworkAtlas::from_sizes(&[48], 16).unwrap();
        assert_eq!(atlas.pad_per_network(), &[0]);
        assert_eq!(atlas.token_columns(0).len(), 3);
    }

    #[test]
    fn seventeen_parcels_get_fifteen_pads() {
        let atlas = NetworkAtlas::from_sizes(&[17, 16], 16).unwrap();
        assert_eq!(atlas.pad_per_network(), &[15, 0]);
        assert_eq!(atlas.token_columns(0), 0..2);
        assert_eq!(atlas.token_columns(1), 2..3);
        assert_eq!(atlas.padded_width(), 48);
        assert!(atlas.is_pad_column(17));
        assert!(!atlas.is_pad_column(32));
    }

    #[test]
    fn interleaved_membership_is_made_contiguous() {
        let membership = vec![1, 0, 1, 0, 2];
        let names = vec!["a".into(), "b".into(), "c".into()];
        let atlas = NetworkAtlas::new(membership, names, 2).unwrap();
        assert_eq!(atlas.permutation(), &[1, 3, 0, 2, 4]);
        assert_eq!(atlas.layout(), &[Some(1), Some(3), Some(0), Some(2), Some(4), None]);
        assert_eq!(atlas.column_networks(), vec![0, 1, 2]);
    }

    #[test]
    fn identity_layout_leaves_matrix_unchanged() {
        let atlas = NetworkAtlas::from_sizes(&[4, 4], 4).unwrap();
        let x = Tensor::new(&[2, 8], (0..16).map(f64::from).collect()).unwrap();
        assert_eq!(atlas.align(&x).unwrap(), x);
    }

    #[test]
    fn align_round_trip_and_zero_pads() {
        let atlas = NetworkAtlas::new(vec![2, 0, 1, 0, 2, 2], vec!["a".into(), "b".into(), "c".into()], 4).unwrap();
        let x = Tensor::new(&[3, 6], (0..18).map(|v| v as f64 + 0.5).collect()).unwrap();
        let a = atlas.align(&x).unwrap();
        assert_eq!(a.shape(), &[3, 12]);
        for col in 0..12 {
            if atlas.is_pad_column(col) {
                assert!((0..3).all(|r| a.get2(r, col) == 0.0));
            }
        }
        assert_eq!(atlas.unalign(&a).unwrap(), x);
    }

    #[test]
    fn tsv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("atlas.tsv");
        fs::write(&p, "0\t0\tA\n0\t1\tB\n").unwrap();
        assert!(NetworkAtlas::load(&p, 2, 16).is_err());
        fs::write(&p, "0\t0\tA\n1\t7\tB\n").unwrap();
        assert!(matches!(
            NetworkAtlas::load(&p, 7, 16),
            Err(Error::Parse { line: 2, column: 2, .. })
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("atlas.tsv");
        let atlas = NetworkAtlas::from_sizes(&[16, 32, 48, 16, 32, 16, 32], 16).unwrap();
        atlas.save(&p).unwrap();
        let back = NetworkAtlas::load(&p, 7, 16).unwrap();
        assert_eq!(back, atlas);
    }
}
