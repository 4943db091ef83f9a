"""Shared test oracles."""

import numpy as np

from pixelpick.model import Model, params_to_vector, sparse_training_loss, vector_to_params


def fd_gradient(model, image, labels, masks, flat_indices, h=1e-4):
    """Central-difference oracle for selected flat parameter indices."""
    vec = params_to_vector(model.params)
    shapes = [p.shape for p in model.params]
    out = {}
    for idx in flat_indices:
        vp = vec.copy()
        vp[idx] += h
        vm = vec.copy()
        vm[idx] -= h
        lp = sparse_training_loss(
            Model(model.config, vector_to_params(vp, shapes)), image, labels, masks
        )
        lm = sparse_training_loss(
            Model(model.config, vector_to_params(vm, shapes)), image, labels, masks
        )
        out[idx] = (lp - lm) / (2 * h)
    return out


def layer_index_ranges(model):
    """Flat-vector index range of each parameter array."""
    ranges = []
    offset = 0
    for p in model.params:
        ranges.append((offset, offset + p.size))
        offset += p.size
    return ranges
