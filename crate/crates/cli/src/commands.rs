use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use cnnlens_core::actmax::{ascend, AscentConfig, AscentTrace, Objective};
use cnnlens_core::attribution::{
    self, activation_histogram, activation_scores, diff_heatmap, grad_cam, overlay, robustness,
};
use cnnlens_core::data::csv::{fmt_f64, to_string};
use cnnlens_core::data::synthetic::{generate, SyntheticConfig};
use cnnlens_core::data::{
    encode_batch, encode_pgm, encode_ppm, gaussian_noise_images, DatasetStats, LabeledImage,
    Render, Split, CIFAR10_CLASSES,
};
use cnnlens_core::filter_tree::{
    annotate_tree, build_prediction_tree, path_report, query_path, PredictionTree,
};
use cnnlens_core::hier::{
    self, build_hierarchy, minimum_spanning_tree, representative_vectors, CategoryGraph,
};
use cnnlens_core::model::{encode_weights, train, LayerAddress, Model, ModelSpec};
use cnnlens_core::stats::skewness;
use cnnlens_core::tensor::argmax;
use cnnlens_core::{Error, Tensor};

use crate::cli::{CategorySource, Command, Common};
use crate::config::RunConfig;
use crate::run::RunDir;
use crate::workspace::{
    class_index, load_image_set, load_model, load_split, resolve_image, ModelCard, MODEL_CARD,
};

pub fn dispatch(command: &Command, common: &Common, cfg: &RunConfig) -> Result<std::path::PathBuf> {
    let mut run = RunDir::create(cfg, command.name())?;
    let outcome = execute(&mut run, command, common, cfg);
    if let Err(e) = &outcome {
        run.result("error", format!("{e:#}"));
    }
    let dir = run.finish(cfg)?;
    outcome.map(|()| dir)
}

fn execute(run: &mut RunDir, command: &Command, common: &Common, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Train { classes } => cmd_train(run, cfg, classes)?,
        Command::Maximize { image, target } => {
            cmd_maximize(run, cfg, common, image.as_deref(), target.as_deref())?
        }
        Command::Gradcam { image } => cmd_gradcam(run, cfg, common, image)?,
        Command::Diff { image } => cmd_diff(run, cfg, common, image)?,
        Command::Robustness {
            image,
            source_class,
            count,
        } => cmd_robustness(run, cfg, common, image, source_class.as_deref(), *count)?,
        Command::Topk { filter } => cmd_topk(run, cfg, *filter)?,
        Command::Hist { filter, bins } => {
            cmd_hist(run, cfg, *filter, bins.unwrap_or(cfg.analysis.bins))?
        }
        Command::OosTable { set, noise } => cmd_oos(run, cfg, set, *noise)?,
        Command::CategoryTree { source } => cmd_category_tree(run, cfg, source, false)?,
        Command::Mst { source } => cmd_category_tree(run, cfg, source, true)?,
        Command::FilterTree { count } => cmd_filter_tree(run, cfg, common, *count)?,
        Command::QueryPath { tree, image } => cmd_query_path(run, cfg, tree, image)?,
        Command::MakeFixture {
            per_class,
            test_per_class,
        } => cmd_make_fixture(run, cfg, *per_class, *test_per_class)?,
    }
    Ok(())
}

fn ppm(t: &Tensor) -> Result<Vec<u8>> {
    Ok(encode_ppm(t, Render::Clamp)?)
}

fn cmd_train(run: &mut RunDir, cfg: &RunConfig, classes: &[String]) -> Result<()> {
    let classes: Vec<String> = if classes.is_empty() {
        CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()
    } else {
        classes.to_vec()
    };
    let spec = match &cfg.run.spec {
        Some(p) => ModelSpec::load(p)?,
        None => ModelSpec::desk_default(classes.len()),
    };
    if spec.num_classes != classes.len() {
        return Err(Error::Usage(format!(
            "spec has {} classes but {} were selected",
            spec.num_classes,
            classes.len()
        ))
        .into());
    }
    let train_set = load_split(cfg, Split::Train, &classes)?;
    let val_set = load_split(cfg, Split::Test, &classes)?;
    let stats = DatasetStats::from_images(&train_set)?;
    let mut model = Model::new(spec.clone(), stats, cfg.run.seed)?;
    let report = train(&mut model, &train_set, Some(&val_set), &cfg.train)?;

    run.param("classes", &classes);
    run.param("train_images", train_set.len());
    run.param("validation_images", val_set.len());
    run.write("weights.mcnn", encode_weights(&model), "trained weights")?;
    run.write(
        MODEL_CARD,
        ModelCard { classes, spec }.to_toml(),
        "model spec and class names",
    )?;
    let rows: Vec<Vec<String>> = report
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                fmt_f64(e.loss, 6),
                fmt_f64(e.accuracy, 6),
            ]
        })
        .collect();
    run.write(
        "training.csv",
        to_string(&["epoch", "loss", "accuracy"], &rows),
        "per-epoch training loss and accuracy",
    )?;
    run.result("validation_accuracy", report.validation_accuracy);
    println!(
        "validation accuracy: {:.4}",
        report.validation_accuracy.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn ascent_config(cfg: &RunConfig) -> AscentConfig {
    AscentConfig {
        lr: cfg.ascent.lr,
        epochs: cfg.ascent.epochs,
        seed: cfg.run.seed,
        jitter: cfg.ascent.jitter.then_some(cfg.jitter),
        clamp_to_data_range: cfg.ascent.clamp_to_data_range,
    }
}

fn trace_csv(trace: &AscentTrace) -> String {
    let rows: Vec<Vec<String>> = trace
        .objective_per_epoch
        .iter()
        .zip(&trace.predictions)
        .enumerate()
        .map(|(i, (o, p))| vec![(i + 1).to_string(), fmt_f64(*o, 9), p.to_string()])
        .collect();
    to_string(&["epoch", "objective", "predicted_class"], &rows)
}

/// Runs the ascent; on abort the partial trace is still written before the error propagates.
fn run_ascent(
    run: &mut RunDir,
    model: &Model,
    objective: &Objective,
    cfg: &RunConfig,
    start: &Tensor,
) -> Result<AscentTrace> {
    run.param("objective", objective.to_string());
    match ascend(
        model,
        objective,
        &cfg.regularizer,
        &ascent_config(cfg),
        start,
    ) {
        Ok(trace) => {
            run.write(
                "trace.csv",
                trace_csv(&trace),
                "objective and prediction after each epoch",
            )?;
            run.result("start_prediction", trace.start_prediction);
            run.result("flip_epoch", trace.flip_epoch);
            run.result("diff_energy", trace.diff_energy());
            Ok(trace)
        }
        Err(Error::Aborted { epoch, trace }) => {
            run.write(
                "trace.csv",
                trace_csv(&trace),
                "partial trace up to the abort",
            )?;
            run.result("aborted_at_epoch", epoch);
            Err(Error::Aborted { epoch, trace }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_maximize(
    run: &mut RunDir,
    cfg: &RunConfig,
    common: &Common,
    image: Option<&str>,
    target: Option<&str>,
) -> Result<()> {
    let loaded = load_model(cfg)?;
    let objective = match target {
        Some(t) => Objective::single(t.parse::<LayerAddress>()?),
        None => Objective::single(LayerAddress::Presoftmax {
            class: class_index(&loaded.classes, common.class.as_deref())?,
        }),
    };
    let s = loaded.model.spec().input_shape;
    let start = match image {
        Some(arg) => resolve_image(cfg, &loaded.classes, arg)?.pixels,
        None => Tensor::from_fn(&[3, s.height, s.width], |_| 0.5),
    };
    run.param("image", image);
    run.write("start.ppm", ppm(&start)?, "start image")?;
    let trace = run_ascent(run, &loaded.model, &objective, cfg, &start)?;
    run.write(
        "final.ppm",
        ppm(&trace.final_image)?,
        "image after the last epoch",
    )?;
    Ok(())
}

fn cmd_gradcam(run: &mut RunDir, cfg: &RunConfig, common: &Common, image: &str) -> Result<()> {
    let loaded = load_model(cfg)?;
    let img = resolve_image(cfg, &loaded.classes, image)?;
    let predicted = argmax(loaded.model.logits(&img.pixels)?.data());
    let class = match &common.class {
        Some(_) => class_index(&loaded.classes, common.class.as_deref())?,
        None => predicted,
    };
    let heat = grad_cam(&loaded.model, &img.pixels, class, &cfg.analysis.layer)?;
    run.param("image", image);
    run.param("class", class);
    run.result("predicted_class", predicted);
    run.write(
        "heatmap.pgm",
        encode_pgm(&heat.values, Render::Clamp)?,
        "normalized grad-CAM map",
    )?;
    run.write(
        "overlay.ppm",
        ppm(&overlay(&img.pixels, &heat)?)?,
        "image dimmed outside the heatmap",
    )?;
    Ok(())
}

fn cmd_diff(run: &mut RunDir, cfg: &RunConfig, common: &Common, image: &str) -> Result<()> {
    let loaded = load_model(cfg)?;
    let class = class_index(&loaded.classes, common.class.as_deref())?;
    let img = resolve_image(cfg, &loaded.classes, image)?;
    run.param("image", image);
    run.write("start.ppm", ppm(&img.pixels)?, "start image")?;
    let objective = Objective::single(LayerAddress::Presoftmax { class });
    let trace = run_ascent(run, &loaded.model, &objective, cfg, &img.pixels)?;
    let heat = diff_heatmap(&trace.start_image, &trace.final_image)?;
    run.write(
        "final.ppm",
        ppm(&trace.final_image)?,
        "image after the last epoch",
    )?;
    run.write(
        "diff.pgm",
        encode_pgm(&heat.values, Render::Clamp)?,
        "normalized per-pixel change magnitude",
    )?;
    run.write(
        "overlay.ppm",
        ppm(&overlay(&img.pixels, &heat)?)?,
        "start image dimmed outside the changed region",
    )?;
    Ok(())
}

fn cmd_robustness(
    run: &mut RunDir,
    cfg: &RunConfig,
    common: &Common,
    images: &[String],
    source_class: Option<&str>,
    count: usize,
) -> Result<()> {
    let loaded = load_model(cfg)?;
    let target = class_index(&loaded.classes, common.class.as_deref())?;
    let mut subjects: Vec<LabeledImage> = images
        .iter()
        .map(|a| resolve_image(cfg, &loaded.classes, a))
        .collect::<Result<_>>()?;
    if let Some(src) = source_class {
        let label = class_index(&loaded.classes, Some(src))?;
        let test = load_split(cfg, Split::Test, &loaded.classes)?;
        subjects.extend(test.into_iter().filter(|i| i.label == label).take(count));
    }
    if subjects.is_empty() {
        return Err(Error::Usage("no images given (use --image or --source-class)".into()).into());
    }
    let mut rows = Vec::new();
    for img in &subjects {
        let pred = argmax(loaded.model.logits(&img.pixels)?.data());
        if pred == target {
            rows.push(vec![
                img.source_id.clone(),
                pred.to_string(),
                target.to_string(),
                String::new(),
                String::new(),
                String::new(),
                "already-target".into(),
            ]);
            continue;
        }
        let r = robustness(
            &loaded.model,
            &img.pixels,
            target,
            cfg.ascent.lr,
            cfg.ascent.epochs,
        )?;
        rows.push(vec![
            img.source_id.clone(),
            r.start_prediction.to_string(),
            r.target_class.to_string(),
            r.flip_epoch.map_or_else(String::new, |e| e.to_string()),
            fmt_f64(r.diff_energy, 9),
            fmt_f64(r.score, 6),
            String::new(),
        ]);
    }
    run.param("target_class", target);
    run.write(
        "robustness.csv",
        to_string(
            &[
                "source_id",
                "start_prediction",
                "target_class",
                "flip_epoch",
                "diff_energy",
                "score",
                "note",
            ],
            &rows,
        ),
        "flip epoch and change energy per image",
    )?;
    Ok(())
}

fn filter_address(cfg: &RunConfig, filter: usize) -> LayerAddress {
    LayerAddress::Filter {
        layer: cfg.analysis.layer.clone(),
        channel: filter,
    }
}

fn cmd_topk(run: &mut RunDir, cfg: &RunConfig, filter: usize) -> Result<()> {
    let loaded = load_model(cfg)?;
    let test = load_split(cfg, Split::Test, &loaded.classes)?;
    let address = filter_address(cfg, filter);
    let top = attribution::top_k_activating(&loaded.model, &test, &address, cfg.analysis.k)?;
    run.param("address", address.to_string());
    let rows: Vec<Vec<String>> = top
        .iter()
        .enumerate()
        .map(|(i, (id, s))| vec![(i + 1).to_string(), id.clone(), fmt_f64(*s, 9)])
        .collect();
    run.write(
        "topk.csv",
        to_string(&["rank", "source_id", "score"], &rows),
        "highest-activating test images",
    )?;
    for (i, (id, _)) in top.iter().enumerate() {
        let img = test
            .iter()
            .find(|t| &t.source_id == id)
            .expect("ranked ids come from the set");
        run.write(
            &format!("top{:02}.ppm", i + 1),
            ppm(&img.pixels)?,
            format!("rank {} ({id})", i + 1),
        )?;
    }
    Ok(())
}

fn cmd_hist(run: &mut RunDir, cfg: &RunConfig, filter: usize, bins: usize) -> Result<()> {
    let loaded = load_model(cfg)?;
    let test = load_split(cfg, Split::Test, &loaded.classes)?;
    let address = filter_address(cfg, filter);
    let scores = activation_scores(&loaded.model, &test, &address)?;
    let hist = activation_histogram(&loaded.model, &test, &address, bins)?;
    run.param("address", address.to_string());
    run.param("bins", bins);
    run.result("skewness", skewness(&scores));
    let rows: Vec<Vec<String>> = hist
        .iter()
        .map(|b| vec![fmt_f64(b.lo, 9), fmt_f64(b.hi, 9), b.count.to_string()])
        .collect();
    run.write(
        "hist.csv",
        to_string(&["lo", "hi", "count"], &rows),
        "activation histogram over the test split",
    )?;
    Ok(())
}

fn cmd_oos(run: &mut RunDir, cfg: &RunConfig, sets: &[String], noise: Option<usize>) -> Result<()> {
    let loaded = load_model(cfg)?;
    let mut datasets = BTreeMap::new();
    for s in sets {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects NAME=PATH, got `{s}`")))?;
        datasets.insert(name.to_string(), load_image_set(Path::new(path))?);
    }
    if let Some(n) = noise {
        let shape = loaded.model.spec().input_shape;
        let imgs = gaussian_noise_images(
            loaded.model.input_stats(),
            n,
            shape.height,
            shape.width,
            0,
            cfg.run.seed,
        );
        datasets.insert("gaussian-noise".to_string(), imgs);
    }
    if datasets.is_empty() {
        return Err(Error::Usage("no out-of-sample sets (use --set or --noise)".into()).into());
    }
    let table = attribution::oos_table(&loaded.model, &loaded.classes, &datasets)?;
    let mut header = vec!["set".to_string(), "count".to_string()];
    for prefix in ["pct", "mean_wx", "bias"] {
        header.extend(table.class_names.iter().map(|c| format!("{prefix}_{c}")));
    }
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.name.clone(), r.count.to_string()];
            row.extend(r.percentages.iter().map(|p| fmt_f64(*p, 1)));
            row.extend(r.mean_wx.iter().map(|v| fmt_f64(*v, 6)));
            row.extend(r.bias.iter().map(|v| fmt_f64(*v, 6)));
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    run.param("sets", sets);
    run.param("noise", noise);
    run.write(
        "oos.csv",
        to_string(&header_refs, &rows),
        "prediction percentages and logit decomposition per set",
    )?;
    Ok(())
}

fn read_distance_csv(path: &Path) -> Result<CategoryGraph> {
    let (header, rows) = cnnlens_core::data::csv::read(path)?;
    let bad = |m: String| Error::Format {
        path: path.to_path_buf(),
        offset: None,
        message: m,
    };
    let names: Vec<String> = header.iter().skip(1).cloned().collect();
    if rows.len() != names.len() {
        return Err(bad(format!(
            "{} rows for {} categories",
            rows.len(),
            names.len()
        ))
        .into());
    }
    let mut matrix = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.first() != names.get(i) || row.len() != names.len() + 1 {
            return Err(bad(format!(
                "row {} must start with `{}` and hold {} distances",
                i + 1,
                names[i],
                names.len()
            ))
            .into());
        }
        let values = row[1..]
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("`{v}` is not a number")))
            })
            .collect::<std::result::Result<Vec<f64>, Error>>()?;
        matrix.push(values);
    }
    Ok(CategoryGraph::from_matrix(&names, &matrix)?)
}

fn category_graph(
    run: &mut RunDir,
    cfg: &RunConfig,
    source: &CategorySource,
) -> Result<CategoryGraph> {
    if let Some(p) = &source.distances {
        run.param("distances", p);
        return read_distance_csv(p);
    }
    let loaded = load_model(cfg)?;
    let mut images = load_split(cfg, Split::Test, &loaded.classes)?;
    let mut names = loaded.classes.clone();
    if let Some(n) = source.noise_category {
        let shape = loaded.model.spec().input_shape;
        images.extend(gaussian_noise_images(
            loaded.model.input_stats(),
            n,
            shape.height,
            shape.width,
            names.len(),
            cfg.run.seed,
        ));
        names.push("noise".to_string());
    }
    run.param("layer", &cfg.analysis.layer);
    run.param("noise_category", source.noise_category);
    let reps = representative_vectors(&loaded.model, &images, &cfg.analysis.layer, &names)?;
    Ok(CategoryGraph::from_vectors(&reps)?)
}

fn cmd_category_tree(
    run: &mut RunDir,
    cfg: &RunConfig,
    source: &CategorySource,
    mst: bool,
) -> Result<()> {
    let graph = category_graph(run, cfg, source)?;
    run.write(
        "distances.csv",
        hier::distance_matrix_csv(&graph),
        "pairwise cosine distances",
    )?;
    if mst {
        let edges = minimum_spanning_tree(&graph)?;
        run.result("total_weight", edges.iter().map(|e| e.2).sum::<f64>());
        run.write(
            "mst.dot",
            hier::mst_dot(graph.nodes(), &edges),
            "minimum spanning tree",
        )?;
        let rows: Vec<Vec<String>> = edges
            .iter()
            .map(|(a, b, w)| vec![a.clone(), b.clone(), fmt_f64(*w, 6)])
            .collect();
        run.write(
            "mst.csv",
            to_string(&["a", "b", "weight"], &rows),
            "spanning tree edges",
        )?;
    } else {
        let tree = build_hierarchy(&graph)?;
        run.write(
            "hierarchy.dot",
            hier::hierarchy_dot(&tree),
            "category hierarchy",
        )?;
        run.write(
            "merges.csv",
            hier::merge_log_csv(&tree),
            "merge order and weights",
        )?;
    }
    Ok(())
}

fn cmd_filter_tree(run: &mut RunDir, cfg: &RunConfig, common: &Common, count: usize) -> Result<()> {
    let loaded = load_model(cfg)?;
    let class = class_index(&loaded.classes, common.class.as_deref())?;
    let test = load_split(cfg, Split::Test, &loaded.classes)?;
    let images: Vec<LabeledImage> = test
        .iter()
        .filter(|i| i.label == class)
        .take(count)
        .cloned()
        .collect();
    let tree = build_prediction_tree(&loaded.model, &images, &cfg.analysis.layer)?;
    let notes = annotate_tree(&tree, &loaded.model, &test, cfg.analysis.k)?;
    run.param("class", &loaded.classes[class]);
    run.param("images", images.len());
    run.result("stop_reason", tree.stop_reason.to_string());
    run.result("merges", tree.merges.len());
    run.write("tree.dot", tree.to_dot(), "prediction tree")?;
    run.write(
        "merges.csv",
        tree.merge_log_csv(),
        "merge log with critical filters",
    )?;
    run.write(
        "tree.json",
        serde_json::to_string(&tree)?,
        "tree for query-path",
    )?;
    let mut rows = Vec::new();
    for (node, top) in &notes {
        let f = tree.nodes[*node]
            .critical_filter
            .expect("annotated nodes have a critical filter");
        for (rank, (id, score)) in top.iter().enumerate() {
            rows.push(vec![
                format!("n{node}"),
                f.to_string(),
                (rank + 1).to_string(),
                id.clone(),
                fmt_f64(*score, 9),
            ]);
        }
    }
    run.write(
        "annotations.csv",
        to_string(
            &["node", "critical_filter", "rank", "source_id", "score"],
            &rows,
        ),
        "top activating test images per critical filter",
    )?;
    Ok(())
}

fn cmd_query_path(run: &mut RunDir, cfg: &RunConfig, tree_path: &Path, image: &str) -> Result<()> {
    let loaded = load_model(cfg)?;
    let text = std::fs::read_to_string(tree_path)
        .with_context(|| format!("reading {}", tree_path.display()))?;
    let tree: PredictionTree = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: tree_path.to_path_buf(),
        offset: None,
        message: e.to_string(),
    })?;
    let img = resolve_image(cfg, &loaded.classes, image)?;
    let path = query_path(&tree, &loaded.model, &img)?;
    run.param("tree", tree_path);
    run.param("image", image);
    run.write(
        "path.txt",
        path_report(&path),
        "visited nodes with critical filter and activation",
    )?;
    print!("{}", path_report(&path));
    Ok(())
}

fn cmd_make_fixture(
    run: &mut RunDir,
    cfg: &RunConfig,
    per_class: usize,
    test_per_class: usize,
) -> Result<()> {
    let train_cfg = SyntheticConfig {
        per_class,
        seed: cfg.run.seed,
        ..Default::default()
    };
    let test_cfg = SyntheticConfig {
        per_class: test_per_class,
        ..train_cfg.clone()
    };
    run.param("per_class", per_class);
    run.param("test_per_class", test_per_class);
    run.write(
        "data_batch_1.bin",
        encode_batch(&generate(&train_cfg, "train"))?,
        "synthetic training batch",
    )?;
    run.write(
        "test_batch.bin",
        encode_batch(&generate(&test_cfg, "test"))?,
        "synthetic test batch",
    )?;
    Ok(())
}
