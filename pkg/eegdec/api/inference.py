import logging
from typing import Annotated, List, Optional

from fastapi import APIRouter, Depends, File, Form, HTTPException, UploadFile
from pydantic import BaseModel
from sqlalchemy.orm import Session

from eegdec.api.common import http_error, resolve_model
from eegdec.data_io import decode_signal
from eegdec.database import get_db
from eegdec.errors import DecoderError
from eegdec.inference import TailPolicy, infer_eeg, plan_chunks
from eegdec.tensor import Tensor

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/inference", tags=["inference"])

MAX_FILE_SIZE = 200 * 1024 * 1024  # 200MB


class EnvelopeResponse(BaseModel):
    samples: int
    sample_rate_hz: int
    subject_id: int
    envelope: List[float]


@router.post("", response_model=EnvelopeResponse)
async def infer_envelope(
    file: Annotated[UploadFile, File()],
    run_id: Annotated[Optional[int], Form()] = None,
    checkpoint: Annotated[Optional[str], Form()] = None,
    subject_id: Annotated[Optional[int], Form()] = None,
    tail_policy: Annotated[TailPolicy, Form()] = TailPolicy.PROCESS_SHORT_TAIL,
    db: Session = Depends(get_db)
):
    """
    Decode the speech envelope of an uploaded EEGR EEG file.

    The model comes from a run's best checkpoint (`run_id`) or a checkpoint
    path. `subject_id` defaults to the one in the file header.
    """
    if not file.filename:
        raise HTTPException(status_code=400, detail="No file provided. Please upload an EEGR file.")

    content = await file.read()
    if len(content) == 0:
        raise HTTPException(status_code=400, detail="File is empty. Please upload an EEGR file with data.")
    if len(content) > MAX_FILE_SIZE:
        raise HTTPException(
            status_code=400,
            detail=f"File size ({len(content) / (1024*1024):.2f}MB) exceeds 200MB limit."
        )

    model = resolve_model(db, run_id, checkpoint)
    try:
        signal = decode_signal(content, file.filename)
        subject = subject_id if subject_id is not None else signal.subject_id
        eeg = Tensor(signal.data.T)
        plan = plan_chunks(eeg.shape[0], model.config.segment_samples, tail_policy)
        envelope = infer_eeg(model, eeg, subject, plan)
    except DecoderError as exc:
        raise http_error(exc)
    logger.info(f"Decoded {envelope.shape[0]} envelope samples from {file.filename} (subject {subject})")

    return EnvelopeResponse(
        samples=envelope.shape[0],
        sample_rate_hz=signal.sample_rate_hz,
        subject_id=subject,
        envelope=envelope.data.tolist(),
    )
