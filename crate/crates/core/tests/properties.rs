use nonresp_core::averaging::{ic_weights, model_average};
use nonresp_core::logit::{information_criteria, AmeResult};
use nonresp_core::patterns::{build_focus_indicator, detect_patterns};
use nonresp_core::report::{format_ame_table, parse_ame_csv};
use nonresp_core::tabular::{country_split, read_csv, response_rate, Dataset, Schema};
use proptest::prelude::*;

fn schema() -> Schema {
    Schema::from_toml_str(
        r#"
        [[columns]]
        name = "iw"
        kind = "id"
        level = "interviewer"
        [[columns]]
        name = "country"
        kind = "id"
        level = "interviewer"
        [[columns]]
        name = "y"
        kind = "binary"
        [[columns]]
        name = "focus"
        kind = "binary"
        level = "interviewer"
        [[columns]]
        name = "a"
        kind = "continuous"
        [[columns]]
        name = "b"
        kind = "continuous"
        [roles]
        outcomes = ["y"]
        focus = "focus"
        controls = ["a", "b"]
        interviewer = "iw"
        country = "country"
        [[groups]]
        name = "iws"
        columns = ["focus"]
        [[groups]]
        name = "capi"
        columns = ["a", "b"]
        "#,
    )
    .unwrap()
}

#[derive(Debug, Clone)]
struct Row {
    iw: u8,
    y: Option<bool>,
    a: Option<f64>,
    b: Option<f64>,
}

fn row() -> impl Strategy<Value = Row> {
    (
        0u8..6,
        proptest::option::weighted(0.8, any::<bool>()),
        proptest::option::weighted(0.7, -1e3f64..1e3),
        proptest::option::weighted(0.7, -1e3f64..1e3),
    )
        .prop_map(|(iw, y, a, b)| Row { iw, y, a, b })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Interviewer-level columns are constant within interviewer: the country
/// and the focus follow from the interviewer id.
fn to_dataset(rows: &[Row]) -> Dataset {
    let mut csv = String::from("iw,country,y,focus,a,b\n");
    for r in rows {
        let focus = if r.iw % 3 == 0 { "NA".to_string() } else { (r.iw % 2).to_string() };
        csv.push_str(&format!(
            "iw{},{},{},{focus},{},{}\n",
            r.iw,
            ["ES", "IT", "GR"][(r.iw % 3) as usize],
            r.y.map(|v| (v as u8).to_string()).unwrap_or_else(|| "NA".into()),
            cell(r.a),
            cell(r.b)
        ));
    }
    read_csv(csv.as_bytes(), &schema()).unwrap()
}

proptest! {
    #[test]
    fn response_rate_ignores_row_order(rows in prop::collection::vec(row(), 1..60), seed in any::<u64>()) {
        prop_assume!(rows.iter().any(|r| r.y.is_some()));
        let mut shuffled = rows.clone();
        // deterministic Fisher-Yates from the proptest seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = response_rate(&to_dataset(&rows), "y").unwrap();
        let b = response_rate(&to_dataset(&shuffled), "y").unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn country_split_partitions_rows(rows in prop::collection::vec(row(), 1..60)) {
        let d = to_dataset(&rows);
        let parts = country_split(&d);
        let mut ids: Vec<usize> = parts.iter().flat_map(|(_, p)| p.row_ids().to_vec()).collect();
        ids.sort();
        prop_assert_eq!(ids, (0..d.n_rows()).collect::<Vec<_>>());
        for (c, p) in &parts {
            prop_assert!(p.countries().iter().all(|x| x == c));
        }
    }

    #[test]
    fn median_split_is_invariant_to_monotone_rescaling(
        values in prop::collection::vec(proptest::option::weighted(0.9, 0.0f64..=100.0), 1..50),
    ) {
        let countries: Vec<&str> = (0..values.len()).map(|i| ["ES", "IT"][i % 2]).collect();
        prop_assume!(["ES", "IT"].iter().all(|c| {
            values.iter().zip(&countries).any(|(v, k)| v.is_some() && k == c)
        }));
        let squashed: Vec<Option<f64>> = values.iter().map(|v| v.map(|x| 100.0 * (x / 100.0).powi(3))).collect();
        prop_assert_eq!(
            build_focus_indicator(&values, &countries).unwrap(),
            build_focus_indicator(&squashed, &countries).unwrap()
        );
    }

    #[test]
    fn patterns_follow_row_permutations(rows in prop::collection::vec(row(), 1..60)) {
        let d = to_dataset(&rows);
        let reversed: Vec<usize> = (0..d.n_rows()).rev().collect();
        let r = d.select_rows(&reversed);
        let p = detect_patterns(&d, &d.schema().groups).unwrap();
        let q = detect_patterns(&r, &r.schema().groups).unwrap();
        let masks = |s: &nonresp_core::patterns::PatternSet| {
            let mut v: Vec<(Vec<bool>, usize)> = s.patterns.iter().map(|p| (p.mask.clone(), p.count)).collect();
            v.sort();
            v
        };
        prop_assert_eq!(masks(&p), masks(&q));
        for (i, &row) in reversed.iter().enumerate() {
            prop_assert_eq!(&p.patterns[p.assignment[row]].mask, &q.patterns[q.assignment[i]].mask);
        }
    }

    #[test]
    fn ic_weights_normalise_and_ignore_shifts(
        ics in prop::collection::vec(-1e4f64..1e4, 1..40),
        shift in -1e5f64..1e5,
    ) {
        let w = ic_weights(&ics).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let moved: Vec<f64> = ics.iter().map(|v| v + shift).collect();
        let v = ic_weights(&moved).unwrap();
        for (a, b) in w.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// The largest model always gains weight when AIC replaces BIC (n >= 8).
    #[test]
    fn aic_favours_the_largest_model_more_than_bic(
        lls in prop::collection::vec(-2e3f64..-1.0, 2..16),
        n in 8usize..100_000,
    ) {
        let ks: Vec<usize> = (0..lls.len()).map(|i| 2 + i).collect();
        let (aic, bic): (Vec<f64>, Vec<f64>) =
            lls.iter().zip(&ks).map(|(&l, &k)| information_criteria(l, k, n)).unzip();
        let la = ic_weights(&aic).unwrap();
        let lb = ic_weights(&bic).unwrap();
        let last = lls.len() - 1;
        prop_assert!(la[last] >= lb[last] - 1e-12);
    }

    #[test]
    fn averaged_estimate_is_bracketed(
        cells in prop::collection::vec((-5.0f64..5.0, 1e-4f64..4.0, 0.0f64..1.0), 1..12),
    ) {
        let total: f64 = cells.iter().map(|c| c.2).sum();
        prop_assume!(total > 1e-6);
        let betas: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let vars: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let lambda: Vec<f64> = cells.iter().map(|c| c.2 / total).collect();
        let avg = model_average(&betas, &vars, &lambda).unwrap();
        let lo = betas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(avg.beta_ma >= lo - 1e-12 && avg.beta_ma <= hi + 1e-12);
        // the unconditional variance never undercuts the weighted conditional one
        let within: f64 = lambda.iter().zip(&vars).map(|(l, v)| l * v.sqrt()).sum::<f64>().powi(2);
        prop_assert!(avg.var_ma >= within - 1e-12);
    }

    #[test]
    fn dataset_csv_round_trips(rows in prop::collection::vec(row(), 1..40)) {
        let d = to_dataset(&rows);
        let text = d.to_csv_string();
        let back = read_csv(text.as_bytes(), &schema()).unwrap();
        prop_assert_eq!(back.to_csv_string(), text);
        prop_assert_eq!(back.masked_cells(), d.masked_cells());
    }

    #[test]
    fn ame_table_csv_round_trips(
        cells in prop::collection::vec((-1.0f64..1.0, 1e-3f64..0.5), 1..8),
    ) {
        let countries = ["ES", "IT", "GR", "PT"];
        let outcomes = ["thinc2", "bacc"];
        let results: Vec<(String, String, AmeResult)> = cells
            .iter()
            .enumerate()
            .map(|(i, &(a, s))| {
                (countries[i % 4].to_string(), outcomes[i / 4].to_string(), AmeResult::from_estimate(a, s))
            })
            .collect();
        let (_, csv) = format_ame_table(&results, "t");
        let parsed = parse_ame_csv(&csv).unwrap();
        prop_assert_eq!(parsed.len(), results.len());
        for (c, o, a) in &parsed {
            let orig = &results.iter().find(|r| &r.0 == c && &r.1 == o).unwrap().2;
            prop_assert_eq!(a, orig);
        }
        let (_, again) = format_ame_table(&parsed, "t");
        prop_assert_eq!(again, csv);
    }
}
