"""A live annotation session, end to end, without a browser.

The engine proposes pixels, an annotation session serves them one at a
time, a scripted "annotator" answers with key presses (here: the true
class, as a careful human would), and the collected JSONL labels train one
round. The browser UI in frontend/ speaks to the same server over HTTP;
this demo drives the same session objects in-process. Run:

    python demos/04_annotation_session.py
"""

import threading
from pathlib import Path

from pixelpick import (
    ModelConfig,
    SyntheticSpec,
    TrainConfig,
    generate_synthetic,
    load_annotations,
    reveal,
    select_random,
    train_round,
)
from pixelpick.core import PixelRef
from pixelpick.oracle import await_session, human_collect
from pixelpick.server import SessionStore

Path("out").mkdir(exist_ok=True)
labels_path = Path("out/session_labels.jsonl")
labels_path.unlink(missing_ok=True)

dataset = generate_synthetic(SyntheticSpec(num_images=2, height=32, width=32, seed=9))
gts = dataset.masks_by_id()

# The engine proposes 5 pixels per image (random here; any strategy works).
candidates = [
    PixelRef(img.id, r, c)
    for img in dataset.images
    for r in range(img.height)
    for c in range(img.width)
]
proposals = select_random(candidates, n=5, seed=0)

store = SessionStore(dataset, labels_path)
sid = store.create_session(proposals, mode="propose")
handle = await_session(store.get(sid))


def scripted_annotator() -> None:
    """Answer each served proposal with its true class, one key press each."""
    while True:
        nxt = store.next_proposal(sid)
        if nxt["done"]:
            return
        ref = PixelRef(nxt["image_id"], nxt["row"], nxt["col"])
        key_class = reveal(gts[ref.image_id], ref)
        store.submit_label(sid, nxt["index"], key_class, elapsed_ms=730.0)


annotator = threading.Thread(target=scripted_annotator)
annotator.start()
labels = human_collect(handle, timeout=10.0)
annotator.join()

progress = store.progress(sid)
print(f"collected {len(labels)} human labels, mean {progress['mean_ms']:.0f} ms/label")
print(f"label file: {labels_path} ({len(labels_path.read_text().splitlines())} lines)")

# The engine consumes the file and completes a training round.
db = load_annotations(labels_path, num_classes=dataset.num_classes)
model = train_round(
    ModelConfig(num_blocks=1, channels=6, seed=0),
    TrainConfig(epochs=6, lr_decay_epochs=(4,), seed=0),
    dataset.images,
    db,
)
print(f"trained a model on the session's labels: {model.num_parameters()} parameters")
