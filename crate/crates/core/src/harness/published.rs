//! Published reference metrics, printed next to synthetic results in the
//! markdown report. They come from a private cohort and are never asserted.

use crate::evaluation::Resample;
use crate::models::ModelFamily;
use crate::schema::Province;

use super::Source;

const SOURCES: [&str; 9] = ["AB", "BC", "MB", "NL", "NS", "ON", "QC", "CML", "FL"];

// [auc, f1, precision, recall], rows ordered source-major then (none, downsample)
const LR_GLOBAL: [[f64; 4]; 18] = [
    [0.8702, 0.8194, 0.8856, 0.7625],
    [0.8827, 0.7275, 0.6148, 0.8906],
    [0.8315, 0.7730, 0.8934, 0.6812],
    [0.8806, 0.7296, 0.6225, 0.8812],
    [0.8579, 0.8125, 0.9140, 0.7312],
    [0.8754, 0.7462, 0.6679, 0.8453],
    [0.8241, 0.7579, 0.8719, 0.6703],
    [0.8702, 0.6937, 0.5668, 0.8937],
    [0.8696, 0.8092, 0.8541, 0.7687],
    [0.8368, 0.6264, 0.4850, 0.8843],
    [0.8703, 0.8262, 0.9082, 0.7578],
    [0.8878, 0.7729, 0.7043, 0.8562],
    [0.8728, 0.7276, 0.6317, 0.8578],
    [0.8288, 0.6013, 0.4499, 0.9062],
    [0.8686, 0.8217, 0.8996, 0.7562],
    [0.8909, 0.7657, 0.6817, 0.8734],
    [0.7388, 0.6211, 0.8075, 0.5046],
    [0.8134, 0.6041, 0.4730, 0.8359],
];

const MLP_GLOBAL: [[f64; 4]; 18] = [
    [0.8379, 0.7195, 0.6901, 0.7515],
    [0.8411, 0.6527, 0.5285, 0.8531],
    [0.8167, 0.6942, 0.6812, 0.7078],
    [0.8228, 0.6173, 0.4856, 0.8468],
    [0.8348, 0.7453, 0.7775, 0.7156],
    [0.8371, 0.6540, 0.5371, 0.8359],
    [0.7250, 0.5786, 0.6807, 0.5031],
    [0.7817, 0.5376, 0.3889, 0.8703],
    [0.8431, 0.7298, 0.7039, 0.7578],
    [0.8102, 0.5897, 0.4502, 0.8546],
    [0.8568, 0.7827, 0.8166, 0.7515],
    [0.8559, 0.6789, 0.5591, 0.8640],
    [0.8175, 0.6376, 0.5349, 0.7890],
    [0.8038, 0.5777, 0.4359, 0.8562],
    [0.8499, 0.7759, 0.8205, 0.7359],
    [0.8496, 0.6741, 0.5585, 0.8500],
    [0.8665, 0.8176, 0.8942, 0.7531],
    [0.8808, 0.7380, 0.6399, 0.8718],
];

const CROSS_SOURCES: [&str; 4] = ["AB", "ON", "CML", "FL"];
const CROSS_SETS: [Province; 4] = [Province::BC, Province::MB, Province::NS, Province::QC];

// per row: [auc, f1] for BC, MB, NS, QC
const LR_CROSS: [[f64; 8]; 8] = [
    [0.7569, 0.6500, 0.8786, 0.8318, 0.9099, 0.8857, 0.7500, 0.6667],
    [0.8078, 0.6667, 0.8913, 0.7659, 0.9060, 0.8045, 0.7115, 0.6086],
    [0.7569, 0.6500, 0.8786, 0.8318, 0.8918, 0.8787, 0.7692, 0.7000],
    [0.7800, 0.6521, 0.8920, 0.7938, 0.9103, 0.8292, 0.7307, 0.6364],
    [0.7569, 0.6500, 0.8786, 0.8318, 0.8874, 0.8656, 0.7692, 0.7000],
    [0.7800, 0.6521, 0.8960, 0.7910, 0.9104, 0.8139, 0.7307, 0.6364],
    [0.6064, 0.3529, 0.7786, 0.6930, 0.7433, 0.6440, 0.7307, 0.6315],
    [0.8101, 0.6428, 0.8184, 0.6375, 0.8432, 0.7096, 0.7115, 0.6153],
];

const MLP_CROSS: [[f64; 8]; 8] = [
    [0.7569, 0.6500, 0.8670, 0.7656, 0.8608, 0.7654, 0.6730, 0.5454],
    [0.8032, 0.6538, 0.8485, 0.6887, 0.8297, 0.6956, 0.6153, 0.5000],
    [0.7685, 0.6511, 0.8992, 0.8474, 0.9011, 0.8421, 0.8076, 0.7500],
    [0.8032, 0.6538, 0.8764, 0.7412, 0.8521, 0.7252, 0.7500, 0.6667],
    [0.7361, 0.6153, 0.8677, 0.7966, 0.9099, 0.8857, 0.7115, 0.6000],
    [0.7476, 0.5660, 0.8800, 0.7284, 0.8835, 0.7727, 0.6153, 0.5161],
    [0.7569, 0.6500, 0.8807, 0.8392, 0.9144, 0.8985, 0.7115, 0.6000],
    [0.7916, 0.6530, 0.9126, 0.8088, 0.8700, 0.7586, 0.7115, 0.6086],
];

fn strategy_offset(strategy: Resample) -> usize {
    match strategy {
        Resample::None => 0,
        Resample::Downsample => 1,
    }
}

/// Published `[auc, f1, precision, recall]` on the global test set.
pub fn published_global(family: ModelFamily, source: Source, strategy: Resample) -> Option<[f64; 4]> {
    let i = SOURCES.iter().position(|s| *s == source.to_string())?;
    let table = match family {
        ModelFamily::Logistic => &LR_GLOBAL,
        ModelFamily::Mlp => &MLP_GLOBAL,
    };
    Some(table[2 * i + strategy_offset(strategy)])
}

/// Published `[auc, f1]` on a less-sampled provincial test set.
pub fn published_cross(family: ModelFamily, source: Source, strategy: Resample, test: Province) -> Option<[f64; 2]> {
    let i = CROSS_SOURCES.iter().position(|s| *s == source.to_string())?;
    let j = CROSS_SETS.iter().position(|p| *p == test)?;
    let table = match family {
        ModelFamily::Logistic => &LR_CROSS,
        ModelFamily::Mlp => &MLP_CROSS,
    };
    let row = table[2 * i + strategy_offset(strategy)];
    Some([row[2 * j], row[2 * j + 1]])
}
