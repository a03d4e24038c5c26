"""Fixed vocabulary of the task: class set, landmark layout, image geometry."""

EXPRESSIONS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise")
NUM_CLASSES = len(EXPRESSIONS)

NUM_LANDMARKS = 68
LANDMARK_DIM = 2 * NUM_LANDMARKS  # flattened (x, y) pairs

IMAGE_CHANNELS = 3
IMAGE_SIZE = 64
