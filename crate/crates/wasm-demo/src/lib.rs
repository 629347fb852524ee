//! Browser bindings for three FlowPic views of the shipped synthetic profiles:
//! a single flow, the same flow fragmented at a smaller MTU, and the mean of
//! m flows of one class. The plain functions are usable natively; the
//! `#[wasm_bindgen]` exports wrap them.

use flowforge_core::augment::{average_augment, mtu_fragment_flow, AverageConfig, SubsetCap};
use flowforge_core::flow::Flow;
use flowforge_core::flowpic::{build_flowpic, normalize_pic, FlowPic, Normalize, PicSpec};
use flowforge_core::preprocess::truncate_to_window;
use flowforge_core::synth::{default_profiles, generate_flow};
use wasm_bindgen::prelude::*;

/// A rendered pic: max-one scaled cells, row-major with row 0 the smallest size bin.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct PicView {
    cells: Vec<f32>,
    packets: u32,
    bytes: u64,
    max_size: u32,
}

#[wasm_bindgen]
impl PicView {
    pub fn cells(&self) -> Vec<f32> {
        self.cells.clone()
    }

    pub fn bins(&self) -> usize {
        (self.cells.len() as f64).sqrt() as usize
    }

    /// Packets in the window, or input flows for an averaged pic.
    pub fn packets(&self) -> u32 {
        self.packets
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn max_size(&self) -> u32 {
        self.max_size
    }
}

fn raw_spec() -> PicSpec {
    PicSpec {
        normalize: Normalize::None,
        ..Default::default()
    }
}

fn windowed(profile: &str, seed: u64, index: usize) -> Result<Flow, String> {
    let profiles = default_profiles();
    let class = profiles
        .iter()
        .position(|p| p.label == profile)
        .ok_or_else(|| format!("unknown profile {profile:?}"))?;
    let f = generate_flow(&profiles[class], seed, class, index);
    truncate_to_window(&f, raw_spec().time_span_s).map_err(|e| e.to_string())
}

fn view(f: &Flow) -> Result<PicView, String> {
    let pic = build_flowpic(f, &raw_spec()).map_err(|e| e.to_string())?;
    Ok(view_of(&pic, f.packets().len() as u32, f.total_bytes(), f.max_size()))
}

fn view_of(pic: &FlowPic, packets: u32, bytes: u64, max_size: u32) -> PicView {
    PicView {
        cells: normalize_pic(pic).cells().iter().map(|&c| c as f32).collect(),
        packets,
        bytes,
        max_size,
    }
}

pub fn profile_names() -> Vec<String> {
    default_profiles().into_iter().map(|p| p.label).collect()
}

pub fn flow_view(profile: &str, seed: u64, index: usize) -> Result<PicView, String> {
    view(&windowed(profile, seed, index)?)
}

pub fn mtu_view(profile: &str, seed: u64, index: usize, mtu: u32) -> Result<PicView, String> {
    let f = mtu_fragment_flow(&windowed(profile, seed, index)?, mtu).map_err(|e| e.to_string())?;
    view(&f)
}

/// Mean of the pics of flows `0..m` of one profile.
pub fn average_view(profile: &str, seed: u64, m: usize) -> Result<PicView, String> {
    let flows = (0..m)
        .map(|i| windowed(profile, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let pics = flows
        .iter()
        .map(|f| build_flowpic(f, &raw_spec()).map(|p| normalize_pic(&p)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let cfg = AverageConfig {
        m,
        cap: SubsetCap::Absolute(1),
        seed,
    };
    let avg = average_augment(&pics, &cfg).map_err(|e| e.to_string())?;
    let bytes = flows.iter().map(Flow::total_bytes).sum::<u64>() / m as u64;
    let max = flows.iter().map(Flow::max_size).max().unwrap_or(0);
    Ok(view_of(&avg[0], m as u32, bytes, max))
}

#[wasm_bindgen(js_name = profileNames)]
pub fn js_profile_names() -> Vec<String> {
    profile_names()
}

#[wasm_bindgen(js_name = flowPic)]
pub fn js_flow_pic(profile: &str, seed: u32, index: u32) -> Result<PicView, JsError> {
    flow_view(profile, u64::from(seed), index as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = mtuPic)]
pub fn js_mtu_pic(profile: &str, seed: u32, index: u32, mtu: u32) -> Result<PicView, JsError> {
    mtu_view(profile, u64::from(seed), index as usize, mtu).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = averagePic)]
pub fn js_average_pic(profile: &str, seed: u32, m: u32) -> Result<PicView, JsError> {
    average_view(profile, u64::from(seed), m as usize).map_err(|e| JsError::new(&e))
}
