"""Smoke test for the mia_audit extension module."""

import json
import math

import mia_audit


def tiny_config():
    cohort = {
        "subjects": 6,
        "sampling_rate": 250,
        "duration_s": 20.0,
        "heart_rate": [55.0, 90.0],
        "qrs_amplitude": [0.8, 1.2],
        "t_wave_amplitude": [0.2, 0.4],
        "baseline_wander_freq": [0.1, 0.3],
        "noise_std": [0.01, 0.05],
    }
    encoder = {
        "family": "simclr_cnn",
        "embedding_dim": 3,
        "conv_channels": [2, 3],
        "conv_stride": 4,
        "epochs": 1,
        "batch_size": 8,
    }
    return {
        "schema_version": 1,
        "seed": 7,
        "cohorts": [dict(cohort, dataset_id="train"), dict(cohort, dataset_id="aux")],
        "train_datasets": ["train"],
        "encoders": [encoder],
        "attacks": ["score", "learned", "embedding"],
        "audit": {"window_cap": 2, "top_k": 2, "consistency_draws": 2, "mlp_steps": 5},
    }


def main():
    assert mia_audit.auc([3.0, 4.0], [1.0, 2.0]) == 1.0
    assert mia_audit.auc([1.0], [1.0]) == 0.5
    threshold, fpr = mia_audit.calibrate_threshold([0.1, 0.2, 0.3, 0.4], 0.25)
    assert fpr <= 0.25 and threshold == 0.4
    assert mia_audit.aggregate([1.0, 5.0, 3.0], k=2) == 4.0
    assert math.isclose(mia_audit.knn_score([0.0, 0.0], [[3.0, 4.0]], k=5), -5.0)
    assert len(mia_audit.fingerprint(b"{}", 42)) == 64

    text = json.dumps(tiny_config())
    cfg = mia_audit.RunConfig.from_json(text)
    assert cfg.fingerprint == mia_audit.fingerprint(text.encode(), 7)
    corpus = cfg.synthesize()
    assert len(corpus.subjects()) == 12
    members = cfg.members(corpus, "train")
    assert len(members) == 6 and all(m.startswith("train/") for m in members)

    encoder = mia_audit.Encoder.pretrain(cfg, "simclr_cnn", corpus, members)
    assert encoder.train_subjects == members
    window = corpus.windows(members[0])[0]
    assert len(encoder.encode(window)) == encoder.embedding_dim

    report = mia_audit.run_audit(cfg, corpus, [("train", encoder)])
    cells = report.cells()
    assert len(cells) == 3
    for _, _, _, auc, tpr, fpr, adv in cells:
        assert 0.0 <= auc <= 1.0
        assert adv == tpr - fpr
    assert len(report.delta_auc()) == 1
    assert report.delta_heatmap_svg().startswith("<svg")
    assert json.loads(report.to_json())["config_fingerprint"] == cfg.fingerprint

    try:
        mia_audit.Encoder("resnet")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown family accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
