# Run-directory writer: an event_model.DocumentRouter that opens every file
# through a suitcase.utils Manager.
import json
import logging
from pathlib import Path

import event_model
import suitcase.utils
import yaml

from .checkpoint import write_checkpoint

logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.jsonl'


def export(gen, directory):
    """
    Write a stream of training-run documents into a run directory.

    Parameters
    ----------
    gen : iterable
        ``(name, document)`` pairs, as emitted by :func:`naht.mat.train`.
    directory : str, Path or Manager
        Run directory, created if needed. A ``suitcase.utils`` Manager such
        as ``MemoryBuffersManager`` keeps the artifacts off disk.

    Returns
    -------
    artifacts : dict
        Artifact label (``'metrics'``, ``'config'``, ...) to the files the
        Manager produced for it.

    Examples
    --------
    Replay the documents of a training run into ``runs/seed_0``.

    >>> export(docs, 'runs/seed_0')
    """
    with Serializer(directory) as serializer:
        for item in gen:
            serializer(*item)
        return serializer.artifacts


class Serializer(event_model.DocumentRouter):
    """
    Serialize a training run to its run directory.

    From the document stream it writes ``config.yaml`` and ``pools.json``
    (taken from the RunStart metadata keys ``config`` and ``pools``) and one
    line of ``metrics.jsonl`` per Event. Checkpoints, evaluation reports,
    trajectory dumps and failure diagnostics are written through the
    methods of the same name, so every artifact goes through one Manager.

    Parameters
    ----------
    directory : str, Path or Manager
        Run directory, created if needed, or any ``suitcase.utils`` Manager.
        Each file name can be opened once.

    Attributes
    ----------
    artifacts : dict
        Artifact label to produced files, as reported by the Manager.
    """
    def __init__(self, directory):
        super().__init__()
        if isinstance(directory, (str, Path)):
            Path(directory).mkdir(parents=True, exist_ok=True)
            self._manager = suitcase.utils.MultiFileManager(
                directory, allowed_modes=('x', 'xt', 'xb', 'xb+'))
        else:
            self._manager = directory

        self._metrics_file = None
        self._trajectory_file = None
        self._json_fields = ()
        self._descriptor_uids = {}
        self.metrics_lines = 0

    @property
    def artifacts(self):
        return self._manager.artifacts

    def close(self):
        """
        Close every file the Manager opened.
        """
        self._manager.close()

    def __enter__(self):
        return self

    def __exit__(self, *exception_details):
        self.close()

    def _write_text(self, label, name, text):
        file = self._manager.open(label, name, 'xt')
        file.write(text)
        file.flush()

    def start(self, doc):
        self._json_fields = tuple(doc.get('json_fields', ()))
        if 'config' in doc:
            self._write_text('config', 'config.yaml',
                             yaml.safe_dump(doc['config'], sort_keys=False))
        if 'pools' in doc:
            self._write_text('pools', 'pools.json',
                             json.dumps(doc['pools'], sort_keys=True, indent=1))
        self._metrics_file = self._manager.open('metrics', METRICS_FILE, 'xt')

    def descriptor(self, doc):
        self._descriptor_uids[doc['uid']] = doc.get('name')

    def event_page(self, doc):
        # DocumentRouter converts 'event' and 'bulk_events' into event pages.
        if self._descriptor_uids.get(doc['descriptor']) != 'metrics':
            return
        data = doc['data']
        for row in range(len(doc['seq_num'])):
            record = {}
            for key, column in data.items():
                value = column[row]
                if key in self._json_fields and value is not None:
                    value = json.loads(value)
                record[key] = value
            self._metrics_file.write(json.dumps(record, sort_keys=True) + '\n')
            self.metrics_lines += 1
        self._metrics_file.flush()

    def stop(self, doc):
        if self._metrics_file is not None:
            self._metrics_file.flush()
        logger.debug("run stopped exit_status=%s metrics_lines=%d",
                     doc.get('exit_status'), self.metrics_lines)

    def checkpoint(self, label, checkpoint):
        "Write ``checkpoint_<label>.h5``."
        file = self._manager.open('checkpoint', f'checkpoint_{label}.h5', 'xb+')
        write_checkpoint(file, checkpoint)
        file.flush()

    def report(self, role, report):
        "Write an :class:`~naht.mat.evaluation.EvalReport` as ``eval_<role>.json``."
        self._write_text('report', f'eval_{role}.json',
                         json.dumps(report.to_dict(), sort_keys=True, indent=1))

    def trajectory(self, line):
        "Append one step to ``trajectories.jsonl``."
        if self._trajectory_file is None:
            self._trajectory_file = self._manager.open('trajectories',
                                                       'trajectories.jsonl', 'xt')
        self._trajectory_file.write(json.dumps(line, sort_keys=True) + '\n')

    def diagnostics(self, diagnostics):
        self._write_text('diagnostics', 'diagnostics.json',
                         json.dumps(diagnostics, sort_keys=True, indent=1, default=str))
