use anyhow::{bail, Result};
use qmap_core::eval::{logistic_plcc, EvalReport};
use qmap_core::image::load_image;
use qmap_core::models::{score_map_patches, Fusion, ModelManifest, Predictor};
use qmap_nn::{par, ComputeGraph};
use serde_json::json;

use super::{aligned_maps, load_checked, load_generators, open_labels, Data, Partition};
use crate::settings::{Settings, SourceKind};
use crate::stage::Stage;

/// The trained pooler with everything needed to score whole images.
pub(crate) struct Scorer {
    pub pooler: ComputeGraph,
    pub record: ModelManifest,
    pub fusion: Fusion,
    pub source: SourceKind,
    pub generators: Vec<ComputeGraph>,
}

impl Scorer {
    /// Loads the pooler and its generators, refusing mismatched artifacts.
    pub fn load(settings: &Settings, data: &Data) -> Result<Self> {
        let (pooler, record) = load_checked(&settings.pooler_path(), "pooler", data)?;
        let fusion = record.fusion.clone().unwrap_or_else(|| settings.fusion.clone());
        let source: SourceKind = record.source.as_deref().unwrap_or("predicted").parse()?;
        if fusion != settings.fusion || source != settings.pool_source {
            bail!(
                "pooler was trained with {} fusion of {:?} from {} inputs, but the config asks for {} fusion of {:?} from {}",
                fusion.mode,
                fusion.methods,
                source.token(),
                settings.fusion.mode,
                settings.fusion.methods,
                settings.pool_source.token()
            );
        }
        let generators = match source {
            SourceKind::Predicted => {
                let g = load_generators(settings, &fusion.methods, data)?;
                record.verify_generators(&g)?;
                g
            }
            _ => Vec::new(),
        };
        Ok(Self {
            pooler,
            record,
            fusion,
            source,
            generators,
        })
    }

    pub fn predictor(&self) -> Predictor {
        Predictor {
            generators: self.generators.clone(),
            pooler: self.pooler.clone(),
            fusion: self.fusion.clone(),
            patch_size: self.record.patch_size,
            stride: self.record.stride,
        }
    }
}

pub fn cmd_eval(settings: &Settings) -> Result<()> {
    let mut stage = Stage::open("eval", settings)?;
    let data = Data::load(settings)?;
    let part = Partition::new(&data, &settings.split)?;
    let scorer = Scorer::load(settings, &data)?;
    let predictor = scorer.predictor();
    let stores = match scorer.source {
        SourceKind::GroundTruth => scorer.fusion.methods.iter().map(|&m| open_labels(settings, m)).collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let idx = &part.test;
    let scores: Vec<Result<f64>> = par::map_indexed(idx.len(), |k| {
        let e = data.entry(idx[k]);
        Ok(match scorer.source {
            SourceKind::GroundTruth => {
                let maps = aligned_maps(settings, &stores, &e.id)?;
                score_map_patches(&scorer.pooler, &scorer.fusion, &maps, predictor.patch_size, predictor.stride)?
            }
            _ => predictor.predict(&load_image(data.manifest.distorted_path(e))?)?.score,
        })
    });
    let pred = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let gt: Vec<f64> = idx.iter().map(|&i| data.entry(i).score).collect();
    let types: Vec<String> = idx.iter().map(|&i| data.entry(i).distortion.clone()).collect();

    let mut report = EvalReport::new(&pred, &gt, Some(&types))?;
    if settings.logistic {
        report = report.with_logistic(&pred, &gt)?;
        report.plcc_mapped = Some(logistic_plcc(&pred, &gt, settings.logistic_reps, settings.seed)?);
    }

    let mut w = csv::Writer::from_path(stage.dir.join("predictions.csv"))?;
    w.write_record(["id", "type", "level", "score", "predicted"])?;
    for (&i, p) in idx.iter().zip(&pred) {
        let e = data.entry(i);
        w.write_record([e.id.clone(), e.distortion.clone(), e.level.to_string(), e.score.to_string(), p.to_string()])?;
        stage.record("prediction", &json!({"id": e.id, "score": e.score, "predicted": p}))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(stage.dir.join("report.csv"))?;
    w.write_record(["source", "fusion", "methods", "n", "srcc", "plcc", "plcc_logistic"])?;
    let methods: Vec<String> = scorer.fusion.methods.iter().map(ToString::to_string).collect();
    w.write_record([
        scorer.source.token().to_string(),
        scorer.fusion.mode.to_string(),
        methods.join("+"),
        report.n.to_string(),
        format!("{:.6}", report.srcc),
        format!("{:.6}", report.plcc),
        report.plcc_mapped.map(|v| format!("{v:.6}")).unwrap_or_default(),
    ])?;
    w.flush()?;
    stage.record("report", &report)?;
    println!("n {} SRCC {:.4} PLCC {:.4}", report.n, report.srcc, report.plcc);
    for (t, (s, p)) in &report.per_type {
        println!("  {t}: SRCC {s:.4} PLCC {p:.4}");
    }
    stage.finish()?;
    Ok(())
}
