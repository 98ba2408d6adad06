"""Statevector simulation, variational gas classification and a multi-vehicle
entanglement protocol, with a scikit-learn style API."""
from .data import Dataset, GasLabel, SensorRecord, load_csv, save_csv, split, summary_stats, synthetic_clusters
from .encoding import EncoderConfig, EntangledFeatureMap, SensorScaler, build_ansatz, build_feature_map, encode
from .exceptions import (
    CapacityError,
    QmeshError,
    QubitIndexError,
    SchemaError,
    StratificationError,
    TrainingError,
    ValidationError,
)
from .noise import NoiseModel, NoisePolicy, apply_depolarizing, sample_noisy_circuit, simulate_density
from .protocol import (
    ProtocolConfig,
    concurrence,
    entanglement_entropy,
    prepare_bell,
    qpe,
    run_protocol,
    teleport,
)
from .sim import (
    DensityMatrix,
    GateKind,
    GateOp,
    MeasurementHistogram,
    QuantumCircuit,
    StateVector,
    apply_qft,
    measure,
    new_state,
    partial_trace,
)
from .vqc import QuantumGasClassifier, TrainConfig, VqcModel, gradcheck

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "Dataset", "DensityMatrix", "EncoderConfig", "EntangledFeatureMap", "GasLabel",
    "GateKind", "GateOp", "MeasurementHistogram", "NoiseModel", "NoisePolicy", "ProtocolConfig",
    "QmeshError", "QuantumCircuit", "QuantumGasClassifier", "QubitIndexError", "SchemaError",
    "SensorRecord", "SensorScaler", "StateVector", "StratificationError", "TrainConfig",
    "TrainingError", "ValidationError", "VqcModel", "apply_depolarizing", "apply_qft",
    "build_ansatz", "build_feature_map", "concurrence", "encode", "entanglement_entropy",
    "gradcheck", "load_csv", "measure", "new_state", "partial_trace", "prepare_bell", "qpe",
    "run_protocol", "sample_noisy_circuit", "save_csv", "simulate_density", "split",
    "summary_stats", "synthetic_clusters", "teleport",
]
