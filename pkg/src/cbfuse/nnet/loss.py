"""Binary cross-entropy + soft Dice loss on per-channel sigmoid outputs."""
import torch
import torch.nn.functional as F

from ..errors import ShapeMismatch

DICE_EPS = 1e-5


def soft_dice(probs, target, eps=DICE_EPS):
    """Mean over channels of ``(2Σpt + eps) / (Σp + Σt + eps)``; sums span batch and space."""
    dims = [0] + list(range(2, probs.dim()))
    inter = (probs * target).sum(dim=dims)
    denom = probs.sum(dim=dims) + target.sum(dim=dims)
    return ((2.0 * inter + eps) / (denom + eps)).mean()


def loss_bce_dice(logits, target, bce_weight=1.0, dice_weight=1.0, eps=DICE_EPS):
    """``bce_weight·mean-BCE + dice_weight·(1 - softDice)``."""
    if logits.shape != target.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    target = target.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, target)
    return bce_weight * bce + dice_weight * (1.0 - soft_dice(torch.sigmoid(logits), target, eps))


def loss_and_grad(logits, target, **kw):
    """Loss value and its gradient with respect to ``logits`` (numpy in, numpy out)."""
    x = torch.as_tensor(logits).detach().clone().requires_grad_(True)
    t = torch.as_tensor(target, dtype=x.dtype)
    loss = loss_bce_dice(x, t, **kw)
    loss.backward()
    return loss.detach().item(), x.grad.numpy()
