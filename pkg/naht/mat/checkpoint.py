"""
HDF5 checkpoints of a :class:`~naht.mat.numerics.ParamStore`.

Layout::

    /                attrs: format, metadata (JSON), adam_step
    /params/<name>   float64 dataset per parameter
    /optimizer/m/<name>, /optimizer/v/<name>   Adam moments (optional)

Parameter names contain dots, never slashes, so each is a single dataset.
"""
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path

import h5py
import numpy as np

from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

FORMAT = 'naht-mat-ckpt-v1'


@dataclass
class Checkpoint:
    """
    Attributes
    ----------
    params : dict
        name -> float64 array.
    metadata : dict
        JSON-serializable description (model kind, config, iteration, ...).
    optimizer : dict or None
        ``{'step': int, 'm': {...}, 'v': {...}}`` as produced by
        ``ParamStore.optimizer_state``.
    """
    params: dict
    metadata: dict = field(default_factory=dict)
    optimizer: dict = None


def capture(store, metadata=None):
    "Copy of a ParamStore's values and optimizer state as a :class:`Checkpoint`."
    return Checkpoint(params=store.snapshot(), metadata=dict(metadata or {}),
                      optimizer=store.optimizer_state())


def write_checkpoint(file, checkpoint):
    """
    Write ``checkpoint`` to ``file``.

    Parameters
    ----------
    file : str, Path or binary file object
        A writable (and seekable) buffer such as one handed out by a
        ``suitcase.utils`` manager in ``'xb+'`` mode, or a path.
    checkpoint : Checkpoint or ParamStore
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = capture(checkpoint)
    optimizer = checkpoint.optimizer
    with h5py.File(file, 'w') as h5:
        h5.attrs['format'] = FORMAT
        h5.attrs['metadata'] = json.dumps(checkpoint.metadata, sort_keys=True)
        h5.attrs['adam_step'] = optimizer['step'] if optimizer else 0
        group = h5.create_group('params')
        for name, value in sorted(checkpoint.params.items()):
            group.create_dataset(name, data=value, dtype='<f8')
        if optimizer is not None:
            for key in ('m', 'v'):
                moments = h5.create_group(f'optimizer/{key}')
                for name, value in sorted(optimizer[key].items()):
                    moments.create_dataset(name, data=value, dtype='<f8')
    logger.debug("write_checkpoint parameters=%d optimizer=%s",
                 len(checkpoint.params), optimizer is not None)


def read_checkpoint(file):
    """
    Read a file written by :func:`write_checkpoint`.

    Raises
    ------
    CheckpointError
        The file does not exist, is not HDF5, or has the wrong format header.
    """
    if isinstance(file, (str, Path)) and not Path(file).is_file():
        raise CheckpointError(f"checkpoint not found: {file}")
    try:
        h5 = h5py.File(file, 'r')
    except OSError as err:
        raise CheckpointError(f"cannot open checkpoint {file}: {err}") from err
    with h5:
        if h5.attrs.get('format') != FORMAT:
            raise CheckpointError(
                f"{file} is not a {FORMAT} file "
                f"(format={h5.attrs.get('format')!r})")
        params = {name: np.array(ds[()], dtype=np.float64)
                  for name, ds in h5['params'].items()}
        metadata = json.loads(h5.attrs['metadata'])
        optimizer = None
        if 'optimizer' in h5:
            optimizer = {'step': int(h5.attrs['adam_step']),
                         'm': {n: ds[()] for n, ds in h5['optimizer/m'].items()},
                         'v': {n: ds[()] for n, ds in h5['optimizer/v'].items()}}
    return Checkpoint(params=params, metadata=metadata, optimizer=optimizer)


def restore(store, checkpoint):
    "Load a checkpoint's parameters (and optimizer state, if any) into ``store``."
    store.load(checkpoint.params)
    if checkpoint.optimizer is not None:
        store.load_optimizer_state(checkpoint.optimizer)
    return store
