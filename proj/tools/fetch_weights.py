#!/usr/bin/env python3
"""Fetch ImageNet VGG-19 and Inception-v3 weights and store the parts singrav uses.

Writes <dest>/vgg19_features.pth (features.0 .. features.28) and
<dest>/inception_v3_stem.pth (Conv2d_1a_3x3, Conv2d_2a_3x3, Conv2d_2b_3x3).
Default dest follows the runtime lookup: $SINGRAV_WEIGHTS, else $SINGRAV_CACHE/weights,
else ./cache/weights.

Without network access, pass torchvision checkpoints already on disk with
--vgg-file / --inception-file.
"""

import argparse
import os
import pathlib
import sys

import torch

VGG_FILE = "vgg19_features.pth"
INCEPTION_FILE = "inception_v3_stem.pth"
INCEPTION_STEM = ("Conv2d_1a_3x3.", "Conv2d_2a_3x3.", "Conv2d_2b_3x3.")


def default_dest():
    if os.environ.get("SINGRAV_WEIGHTS"):
        return pathlib.Path(os.environ["SINGRAV_WEIGHTS"])
    if os.environ.get("SINGRAV_CACHE"):
        return pathlib.Path(os.environ["SINGRAV_CACHE"]) / "weights"
    return pathlib.Path("cache") / "weights"


def vgg_subset(state):
    out = {}
    for k, v in state.items():
        parts = k.split(".")
        if parts[0] == "features" and int(parts[1]) <= 28:
            out[k] = v.detach().clone().float()
    # conv1_1 .. conv5_1
    if len(out) != 26:
        raise SystemExit(f"expected 13 conv layers up to relu5_1, found {len(out) // 2}")
    return out


def inception_subset(state):
    out = {k: v.detach().clone() for k, v in state.items() if k.startswith(INCEPTION_STEM)}
    out = {k: (v.float() if v.is_floating_point() else v) for k, v in out.items()}
    if not out:
        raise SystemExit("no Inception stem layers in the checkpoint")
    return out


def load_state(path):
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, torch.nn.Module):
        state = state.state_dict()
    return state


def download(name):
    import torchvision

    if name == "vgg":
        return torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1).state_dict()
    return torchvision.models.inception_v3(
        weights=torchvision.models.Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True, init_weights=False
    ).state_dict()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", type=pathlib.Path, default=None)
    ap.add_argument("--vgg-file", type=pathlib.Path, help="local torchvision vgg19 checkpoint")
    ap.add_argument("--inception-file", type=pathlib.Path, help="local torchvision inception_v3 checkpoint")
    ap.add_argument("--skip-vgg", action="store_true")
    ap.add_argument("--skip-inception", action="store_true")
    args = ap.parse_args(argv)

    dest = args.dest or default_dest()
    dest.mkdir(parents=True, exist_ok=True)
    if not args.skip_vgg:
        state = load_state(args.vgg_file) if args.vgg_file else download("vgg")
        # plain dict in the zip container; the C++ side reads it with pickle_load
        torch.save(vgg_subset(state), dest / VGG_FILE)
        print(f"wrote {dest / VGG_FILE}")
    if not args.skip_inception:
        state = load_state(args.inception_file) if args.inception_file else download("inception")
        torch.save(inception_subset(state), dest / INCEPTION_FILE)
        print(f"wrote {dest / INCEPTION_FILE}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
