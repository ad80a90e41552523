"""Spiking-network scene core: datasets, spatial queries, playback clock."""

from .model import (
    KIND_INPUT,
    KIND_REGULAR,
    Connection,
    DanglingId,
    DatasetError,
    DuplicateNeuronId,
    MalformedRow,
    NetworkDataset,
    Neuron,
    NonDenseNeuronIds,
    SelfConnection,
    SpikeEvent,
    UnknownId,
    neuron_info,
    potential_at,
    spikes_in,
)
from .io import load_dataset
from .synth import synth_network
from .spatial import SpatialIndex, nearest_neuron
from .playback import PlaybackClock

__all__ = [
    "KIND_INPUT",
    "KIND_REGULAR",
    "Connection",
    "DanglingId",
    "DatasetError",
    "DuplicateNeuronId",
    "MalformedRow",
    "NetworkDataset",
    "Neuron",
    "NonDenseNeuronIds",
    "SelfConnection",
    "SpikeEvent",
    "UnknownId",
    "neuron_info",
    "potential_at",
    "spikes_in",
    "load_dataset",
    "synth_network",
    "SpatialIndex",
    "nearest_neuron",
    "PlaybackClock",
]
