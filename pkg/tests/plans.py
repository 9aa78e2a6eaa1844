"""Small experiment plans shared by the pipeline tests."""

TINY_PLAN = {
    "shots": [1],
    "ranks": [4],
    "seeds": [0, 1],
    "epochs": 4,
    "eval_interval": 2,
    "batch_size": 2,
    "source": {"synth": {"n_images": 24, "objects_per_image": [1, 2], "object_scale": [0.2, 0.4],
                         "seed": 11}},
    "target": {"synth": {"n_images": 30, "objects_per_image": [2, 4], "object_scale": [0.1, 0.2],
                         "brightness_shift": 0.25, "density_profile": "dense", "seed": 12}},
    "detector": {"n_proposals": 16, "sampling_steps": 2, "embed_dim": 32, "hidden_dim": 32},
    "pretrain": {"steps": 40, "eval_every": 20, "batch_size": 4},
}
