//! Shape propagation and MAC accounting for the grid head.
//!
//! Two heads are modelled. The light head works at 7x7 after one stride-2
//! conv, fuses with a single 5x5 depthwise conv and upsamples twice with
//! grouped deconvs to 28x28. The original head stays at 14x14, fuses with
//! three 5x5 convs (one group per grid point) and upsamples to 56x56.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Channel width of the RoI features fed to the grid head.
pub const ROI_CHANNELS: usize = 256;
/// Spatial size of the RoIAlign output.
pub const ROI_SIZE: usize = 14;
pub const CONV_NORM_GROUPS: usize = 36;
pub const DECONV_NORM_GROUPS: usize = 9;
pub const DEFAULT_CHANNELS: usize = 576;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("layer {index} ({name}): {reason}")]
    Shape { index: usize, name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Deconv,
    DepthwiseConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
}

impl LayerSpec {
    /// Same-padded convolution.
    pub fn conv(name: &str, k: usize, stride: usize, cin: usize, cout: usize, groups: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv,
            kernel: (k, k),
            stride,
            padding: (k - 1) / 2,
            in_channels: cin,
            out_channels: cout,
            groups,
        }
    }

    pub fn depthwise(name: &str, k: usize, channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::DepthwiseConv,
            ..LayerSpec::conv(name, k, 1, channels, channels, channels)
        }
    }

    /// 2x upsampling transposed conv (kernel 4, stride 2, padding 1).
    pub fn deconv2x(name: &str, cin: usize, cout: usize, groups: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Deconv,
            kernel: (4, 4),
            stride: 2,
            padding: 1,
            in_channels: cin,
            out_channels: cout,
            groups,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.stride == 0 || self.groups == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err("stride, groups and kernel must be >= 1".into());
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        if self.kind == LayerKind::DepthwiseConv
            && !(self.groups == self.in_channels && self.in_channels == self.out_channels)
        {
            return Err("depthwise layer needs groups == in_channels == out_channels".into());
        }
        Ok(())
    }

    /// Output spatial size for an `(h, w)` input.
    pub fn output_size(&self, (h, w): (usize, usize)) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding);
        match self.kind {
            LayerKind::Conv | LayerKind::DepthwiseConv => {
                let oh = (h + 2 * p).checked_sub(kh)? / s + 1;
                let ow = (w + 2 * p).checked_sub(kw)? / s + 1;
                Some((oh, ow))
            }
            LayerKind::Deconv => {
                let oh = ((h.checked_sub(1)?) * s + kh).checked_sub(2 * p)?;
                let ow = ((w.checked_sub(1)?) * s + kw).checked_sub(2 * p)?;
                Some((oh, ow))
            }
        }
    }

    /// Weight count, no bias.
    pub fn params(&self) -> u64 {
        (self.out_channels * (self.in_channels / self.groups) * self.kernel.0 * self.kernel.1) as u64
    }

    /// Multiply-accumulates at output resolution `(oh, ow)`.
    pub fn macs(&self, (oh, ow): (usize, usize)) -> u64 {
        (oh * ow) as u64 * self.params()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub input_resolution: (usize, usize),
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: LayerKind,
    /// `(channels, height, width)`
    pub output_shape: (usize, usize, usize),
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLedger {
    pub name: String,
    pub rows: Vec<LayerRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl HeadLedger {
    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.rows.last().map(|r| r.output_shape).unwrap_or((0, 0, 0))
    }
}

impl HeadSpec {
    /// Propagates shapes through every layer and tallies params and MACs.
    pub fn ledger(&self) -> Result<HeadLedger, HeadError> {
        let mut shape = (self.input_channels, self.input_resolution.0, self.input_resolution.1);
        let mut rows = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let err = |reason: String| HeadError::Shape {
                index,
                name: layer.name.clone(),
                reason,
            };
            layer.check().map_err(err)?;
            if layer.in_channels != shape.0 {
                return Err(err(format!(
                    "expects {} input channels, got {}",
                    layer.in_channels, shape.0
                )));
            }
            let (oh, ow) = layer
                .output_size((shape.1, shape.2))
                .filter(|&(h, w)| h > 0 && w > 0)
                .ok_or_else(|| err(format!("kernel does not fit a {}x{} input", shape.1, shape.2)))?;
            shape = (layer.out_channels, oh, ow);
            rows.push(LayerRow {
                name: layer.name.clone(),
                kind: layer.kind,
                output_shape: shape,
                params: layer.params(),
                macs: layer.macs((oh, ow)),
            });
        }
        Ok(HeadLedger {
            name: self.name.clone(),
            total_params: rows.iter().map(|r| r.params).sum(),
            total_macs: rows.iter().map(|r| r.macs).sum(),
            rows,
        })
    }

    pub fn output_shape(&self) -> Result<(usize, usize, usize), HeadError> {
        Ok(self.ledger()?.output_shape())
    }
}

/// Total multiply-accumulates of a head.
pub fn flops(head: &HeadSpec) -> Result<u64, HeadError> {
    Ok(head.ledger()?.total_macs)
}

/// Where the depthwise fusion layer sits in the light head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionPlacement {
    #[default]
    BeforeDeconv,
    AfterDeconv,
}

fn check_channels(channels: usize, n_points: usize) -> Result<(), HeadError> {
    if n_points == 0 {
        return Err(HeadError::Constraint("n_points must be >= 1".into()));
    }
    if channels == 0 || !channels.is_multiple_of(CONV_NORM_GROUPS) || !channels.is_multiple_of(n_points) {
        return Err(HeadError::Constraint(format!(
            "channel width {channels} must be a positive multiple of the conv norm group count \
             ({CONV_NORM_GROUPS}) and of the grid point count ({n_points})"
        )));
    }
    Ok(())
}

/// Light grid head: 14x14 -> stride-2 conv -> seven 3x3 convs at 7x7 ->
/// 5x5 depthwise fusion -> two grouped 2x deconvs to `n_points x 28 x 28`.
pub fn build_plus_head(channels: usize, n_points: usize) -> Result<HeadSpec, HeadError> {
    build_plus_head_with(channels, n_points, FusionPlacement::BeforeDeconv)
}

pub fn build_plus_head_with(channels: usize, n_points: usize, fusion: FusionPlacement) -> Result<HeadSpec, HeadError> {
    check_channels(channels, n_points)?;
    let mut layers = vec![LayerSpec::conv("conv0_s2", 3, 2, ROI_CHANNELS, channels, 1)];
    for i in 1..=7 {
        layers.push(LayerSpec::conv(&format!("conv{i}"), 3, 1, channels, channels, 1));
    }
    let deconvs = [
        LayerSpec::deconv2x("deconv1", channels, channels, n_points),
        LayerSpec::deconv2x("deconv2", channels, n_points, n_points),
    ];
    match fusion {
        FusionPlacement::BeforeDeconv => {
            layers.push(LayerSpec::depthwise("fusion_dw5", 5, channels));
            layers.extend(deconvs);
        }
        FusionPlacement::AfterDeconv => {
            layers.extend(deconvs);
            layers.push(LayerSpec::depthwise("fusion_dw5", 5, n_points));
        }
    }
    Ok(HeadSpec {
        name: "plus".into(),
        input_resolution: (ROI_SIZE, ROI_SIZE),
        input_channels: ROI_CHANNELS,
        layers,
        n_points,
    })
}

/// Original grid head: eight 3x3 convs at 14x14, three 5x5 fusion convs
/// (grouped per grid point), two grouped 2x deconvs to `n_points x 56 x 56`.
pub fn build_original_head(channels: usize, n_points: usize) -> Result<HeadSpec, HeadError> {
    check_channels(channels, n_points)?;
    let mut layers = vec![LayerSpec::conv("conv0", 3, 1, ROI_CHANNELS, channels, 1)];
    for i in 1..=7 {
        layers.push(LayerSpec::conv(&format!("conv{i}"), 3, 1, channels, channels, 1));
    }
    for i in 1..=3 {
        layers.push(LayerSpec::conv(
            &format!("fusion{i}_5x5"),
            5,
            1,
            channels,
            channels,
            n_points,
        ));
    }
    layers.push(LayerSpec::deconv2x("deconv1", channels, channels, n_points));
    layers.push(LayerSpec::deconv2x("deconv2", channels, n_points, n_points));
    Ok(HeadSpec {
        name: "original".into(),
        input_resolution: (ROI_SIZE, ROI_SIZE),
        input_channels: ROI_CHANNELS,
        layers,
        n_points,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupViolation {
    /// Offending layer, `None` for a global rule.
    pub layer: Option<String>,
    pub message: String,
}

/// Checks the normalization group counts against the head: both counts
/// must be multiples of `n_points` and divide the channel count of every
/// normalized layer (all layers except the final heatmap output).
pub fn validate_groups(
    head: &HeadSpec,
    n_points: usize,
    conv_norm_groups: usize,
    deconv_norm_groups: usize,
) -> Vec<GroupViolation> {
    let mut out = Vec::new();
    for (label, g) in [("conv", conv_norm_groups), ("deconv", deconv_norm_groups)] {
        if g == 0 || n_points == 0 || g % n_points != 0 {
            out.push(GroupViolation {
                layer: None,
                message: format!("{label} norm groups {g} is not a multiple of the grid point count {n_points}"),
            });
        }
    }
    let normalized = head.layers.len().saturating_sub(1);
    for layer in &head.layers[..normalized] {
        let g = match layer.kind {
            LayerKind::Conv | LayerKind::DepthwiseConv => conv_norm_groups,
            LayerKind::Deconv => deconv_norm_groups,
        };
        if g == 0 || layer.out_channels % g != 0 {
            out.push(GroupViolation {
                layer: Some(layer.name.clone()),
                message: format!(
                    "{} output channels not divisible by {g} norm groups",
                    layer.out_channels
                ),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plus_head_shape_and_layer_count() {
        let head = build_plus_head(576, 9).unwrap();
        assert_eq!(head.layers.len(), 11);
        assert_eq!(head.output_shape().unwrap(), (9, 28, 28));
        let ledger = head.ledger().unwrap();
        assert_eq!(ledger.rows[0].output_shape, (576, 7, 7));
        assert_eq!(ledger.rows[8].output_shape, (576, 7, 7));
        assert_eq!(ledger.rows[9].output_shape, (576, 14, 14));
        let after = build_plus_head_with(576, 9, FusionPlacement::AfterDeconv).unwrap();
        assert_eq!(after.output_shape().unwrap(), (9, 28, 28));
    }

    #[test]
    fn original_head_shape() {
        let head = build_original_head(576, 9).unwrap();
        assert_eq!(head.output_shape().unwrap(), (9, 56, 56));
        let fusion = head.layers.iter().filter(|l| l.name.starts_with("fusion")).count();
        assert_eq!(fusion, 3);
        assert_eq!(
            head.layers[1].out_channels,
            build_plus_head(576, 9).unwrap().layers[1].out_channels
        );
    }

    #[test]
    fn channel_constraint() {
        assert!(matches!(build_plus_head(100, 9), Err(HeadError::Constraint(_))));
        assert!(matches!(build_original_head(100, 9), Err(HeadError::Constraint(_))));
        assert!(build_plus_head(72, 9).is_ok());
        assert!(build_plus_head(36 * 5, 9).is_ok());
    }

    #[test]
    fn hand_counted_macs() {
        let head = HeadSpec {
            name: "t".into(),
            input_resolution: (4, 4),
            input_channels: 1,
            layers: vec![LayerSpec::conv("c", 3, 1, 1, 1, 1)],
            n_points: 1,
        };
        assert_eq!(flops(&head).unwrap(), 144);

        let (c, h, w) = (64, 7, 9);
        let dw = HeadSpec {
            name: "dw".into(),
            input_resolution: (h, w),
            input_channels: c,
            layers: vec![LayerSpec::depthwise("dw", 5, c)],
            n_points: 1,
        };
        assert_eq!(flops(&dw).unwrap(), (h * w * c * 25) as u64);
    }

    #[test]
    fn grouped_deconv_is_one_over_groups() {
        let mk = |groups| HeadSpec {
            name: "d".into(),
            input_resolution: (7, 7),
            input_channels: 576,
            layers: vec![LayerSpec::deconv2x("d", 576, 576, groups)],
            n_points: 9,
        };
        assert_eq!(flops(&mk(1)).unwrap(), 9 * flops(&mk(9)).unwrap());
    }

    #[test]
    fn plus_is_cheaper() {
        let plus = flops(&build_plus_head(576, 9).unwrap()).unwrap();
        let orig = flops(&build_original_head(576, 9).unwrap()).unwrap();
        assert!(plus < orig);
        assert!((plus as f64 / orig as f64) < 0.5);
    }

    #[test]
    fn shape_errors_are_reported() {
        let head = HeadSpec {
            name: "bad".into(),
            input_resolution: (14, 14),
            input_channels: 256,
            layers: vec![LayerSpec::conv("c", 3, 1, 128, 64, 1)],
            n_points: 1,
        };
        assert!(matches!(head.ledger(), Err(HeadError::Shape { index: 0, .. })));
        let bad_dw = LayerSpec {
            groups: 4,
            ..LayerSpec::depthwise("dw", 5, 8)
        };
        assert!(bad_dw.check().is_err());
        let tiny = HeadSpec {
            name: "tiny".into(),
            input_resolution: (1, 1),
            input_channels: 1,
            layers: vec![LayerSpec {
                padding: 0,
                ..LayerSpec::conv("c", 3, 1, 1, 1, 1)
            }],
            n_points: 1,
        };
        assert!(tiny.ledger().is_err());
    }

    #[test]
    fn validate_groups_examples() {
        let head = build_plus_head(576, 9).unwrap();
        assert!(validate_groups(&head, 9, 36, 9).is_empty());
        let v = validate_groups(&head, 9, 30, 9);
        assert!(v.iter().any(|v| v.layer.is_none()));
        let small = build_plus_head(72, 9).unwrap();
        assert!(validate_groups(&small, 9, 36, 9).is_empty());
        // 72 channels cannot be split into 144 groups even though 144 is a multiple of 9
        assert!(validate_groups(&small, 9, 144, 9).iter().any(|v| v.layer.is_some()));
        let orig = build_original_head(576, 9).unwrap();
        assert!(validate_groups(&orig, 9, 36, 9).is_empty());
    }

    proptest! {
        #[test]
        fn plus_cheaper_for_every_valid_width(k in 1usize..40) {
            let c = 36 * k;
            let plus = flops(&build_plus_head(c, 9).unwrap()).unwrap();
            let orig = flops(&build_original_head(c, 9).unwrap()).unwrap();
            prop_assert!(plus < orig);
        }

        #[test]
        fn macs_monotone(c in 1usize..64, h in 2usize..32, k in 1usize..4) {
            let mk = |c: usize, h: usize, k: usize| HeadSpec {
                name: "m".into(),
                input_resolution: (h, h),
                input_channels: c,
                layers: vec![LayerSpec::conv("c", 2 * k + 1, 1, c, c, 1)],
                n_points: 1,
            };
            let base = flops(&mk(c, h, k)).unwrap();
            prop_assert!(flops(&mk(c + 1, h, k)).unwrap() > base);
            prop_assert!(flops(&mk(c, h + 1, k)).unwrap() > base);
            prop_assert!(flops(&mk(c, h, k + 1)).unwrap() > base);
        }
    }
}
