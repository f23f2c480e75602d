"""
IoU and mean IoU
================

Confusion-matrix IoU, the undefined-class policy, and a published table row.
"""

import numpy as np

from damageseg.datamodel import ClassTable
from damageseg.metrics import ConfusionMatrix, iou_per_class, mean_iou, report

truth = np.array([[0, 0, 1], [1, 2, 2], [255, 2, 0]], np.uint8)
pred = np.array([[0, 1, 1], [2, 2, 0], [1, 2, 0]], np.uint8)
cm = ConfusionMatrix(4).accumulate(pred, truth)
print(cm.counts)
ious = iou_per_class(cm)
print("IoU:", ious.round(3))
print("mIoU (exclude undefined):", round(mean_iou(ious), 4))
print("mIoU (undefined as 0):   ", round(mean_iou(ious, "zero"), 4))

row = [85.02, 88.80, 69.06, 72.93, 72.05, 63.64, 82.88, 41.28, 81.25, 87.53, 76.22]
print("reported-row mean:", round(mean_iou(row), 2))

table = ClassTable(names=("a", "b", "c", "d"), rare_set=())
print(report(cm, table)["miou"])
