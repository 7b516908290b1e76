//! The stacked CED feeding the feature extractor as one trainable model.

use tensorcore::{Bindings, Graph, ParamSet, Var};

use crate::ced::{stacked_graph, CedModel, StackedCed, STACK_FIRST, STACK_SECOND};
use crate::embedder::{fe_graph, FeModel, HEAD, TRUNK};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::triplet::TripletModel;

/// Raw images in; `[original, learned TCM, learned IRT]` assembled inside
/// the graph so the triplet gradient reaches both CEDs.
#[derive(Clone, Debug, PartialEq)]
pub struct EndToEnd {
    stacked: StackedCed,
    fe: FeModel,
    params: ParamSet,
    train_backbone: bool,
    train_head: bool,
}

impl EndToEnd {
    pub fn new(stacked: StackedCed, fe: FeModel) -> Result<Self> {
        if fe.config.input_channels != 3 || fe.config.input_size != stacked.input_size() {
            return Err(Error::contract("end-to-end model needs a 3-channel FE matching the CED input size"));
        }
        let mut params = stacked.params();
        for (k, v) in fe.params.iter() {
            params.insert(k.clone(), v.clone());
        }
        Ok(EndToEnd { stacked, fe, params, train_backbone: true, train_head: true })
    }

    /// Current weights split back into the two models.
    pub fn parts(&self) -> Result<(StackedCed, FeModel)> {
        let mut stacked = self.stacked.clone();
        stacked.set_params(&self.params)?;
        let mut fe = self.fe.clone();
        fe.params = self.params.iter().filter(|(k, _)| k.starts_with(TRUNK) || k.starts_with(HEAD)).map(|(k, v)| (k.clone(), v.clone())).collect();
        Ok((stacked, fe))
    }

    pub fn first(&self) -> &CedModel {
        &self.stacked.first
    }
}

impl TripletModel for EndToEnd {
    type Input = Image;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn is_trainable(&self, name: &str) -> bool {
        let backbone = name.starts_with(STACK_FIRST) || name.starts_with(STACK_SECOND) || name.starts_with(TRUNK);
        (self.train_backbone && backbone) || (self.train_head && name.starts_with(HEAD))
    }

    fn set_trainable(&mut self, backbone: bool, head: bool) {
        self.train_backbone = backbone;
        self.train_head = head;
    }

    fn embed_graph(&self, g: &mut Graph, b: &Bindings, x: &Image, dropout_seed: Option<u64>) -> Result<Var> {
        let xv = g.constant(x.to_tensor());
        let out = stacked_graph(g, b, &self.stacked.first.config, &self.stacked.second.config, xv)?;
        let two = g.concat_channels(xv, out.tcm)?;
        let three = g.concat_channels(two, out.irt)?;
        fe_graph(g, b, &self.fe.config, three, dropout_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ced::{build_ced, stack_ceds, CedConfig};
    use crate::embedder::{build_fe, stage_list, FeConfig};

    #[test]
    fn matches_separate_models_and_splits_back() {
        let cc = CedConfig { depth: 2, base_channels: 4, input_size: 16 };
        let stacked = stack_ceds(build_ced(cc, 1).unwrap(), build_ced(cc, 2).unwrap()).unwrap();
        let fc = FeConfig { input_size: 16, input_channels: 3, stages: stage_list([4, 4, 4, 8, 8, 8]), pool_grid: 2, embedding_dim: 8, dropout: 0.0 };
        let fe = build_fe(fc, 3).unwrap();
        let m = EndToEnd::new(stacked.clone(), fe.clone()).unwrap();
        let img = Image::filled(16, 16, 0.25);
        let direct = fe.embed(&stacked.extract_features(&img).unwrap()).unwrap();
        assert_eq!(m.embed_input(&img).unwrap(), direct);
        let (s2, f2) = m.parts().unwrap();
        assert_eq!((s2, f2), (stacked, fe));
    }
}
