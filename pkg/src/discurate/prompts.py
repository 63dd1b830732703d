"""Bundled prompt templates.

Slots use the [[Name]] convention; rendering fails if any slot is left
unbound. Typos and spacing inside the annotation prompt bodies are
intentional and preserved from the source prompt set.
"""
from __future__ import annotations

from .oracle import PromptTemplate

SCENE_ANNOTATION = PromptTemplate(
    name="scene_annotation",
    forbids_view_terms=True,
    body=(
        "Given the multiple images of a scene, describe the scene. Note that "
        "you must obey the following requrirements: 1. Avoid using "
        "expressions like 'the image' in the description;2. Avoid using "
        "relative direction words/phrases, such as left/right/front/back;"
        "3. Do not give the specific number of any objects in the image and "
        "just use 'multiple';4. Be concise and accurate and output no more "
        "than 300 words."
    ),
)

FRAME_ANNOTATION = PromptTemplate(
    name="frame_annotation",
    forbids_view_terms=True,
    body=(
        "Describe the scene shown in the image. Note that you must obey the "
        "following requrirements: 1. Avoid using expressions like 'the "
        "image' in the description; 2. Avoid using relative direction "
        "words/phrases, such as left/right/front/back; 3. Do not give the "
        "specific number of any objects in the image and just use "
        "'multiple';4. Be concise and accurate and output no more than 100 "
        "words."
    ),
)

OBJECT_ANNOTATION = PromptTemplate(
    name="object_annotation",
    body=(
        'Suppose you are an image annotation assistant, and you will judge '
        'whether the "[[ObjectLabel]]" can be seen in the bounding box of '
        'given images and describe it. Follow the following rules in one '
        'step:\n'
        '1. Firstly, judge that whether the "[[ObjectLabel]]" can be seen '
        'in the bounding box of given images and return YES/NO.\n'
        '2. If the "[[ObjectLabel]]" can be seen clearly, summarize a '
        'precise object description for "[[ObjectLabel]]".\n'
        'Note the following requirements:\n'
        '1. Avoid using words such as "image/scene" in the answer.\n'
        '2. Do not include other objects in the answer.\n'
        "3. Avoid using non-sense words, such as 'unclear', 'unknown', "
        "'unidentified', 'uncertain', 'unpredictable', 'doubtful', "
        "'undetermined', 'unable'."
    ),
)

RELATION_JUDGMENT = PromptTemplate(
    name="relation_judgment",
    forbids_view_terms=False,  # the No-branch response legitimately reuses them
    body=(
        "Carefully observe the two objects enclosed by the bounding boxes "
        "in the image. Is the [[ObjectA]] [[Relation]] [[ObjectB]] in this "
        "picture? Return Yes/No, and if NO, briefly describe the spatial "
        "relationship between two objects, with the following requirements: "
        "1. Do not use any descriptions that rely on the current camera "
        "perspective, such as 'in front of', 'behind', 'left' or 'right'; "
        "2. Use the relations in [[Predefined Relations]]."
    ),
)

# Slot name kept as published, long as it is.
RELATION_DESCRIPTION_SLOT = "the corrected description of object relations"

RELATION_EXTRACTION = PromptTemplate(
    name="relation_extraction",
    forbids_view_terms=True,
    body=(
        "Given the relationship description between objectA '[[ObjectA]]' "
        "and objectB '[[ObjectB]]': "
        f"[[{RELATION_DESCRIPTION_SLOT}]]\n"
        "Extract the preposition/phrase indicating their relationship, with "
        "the following requirements:\n"
        "1. Return The relationship preposition/phrase only and do not add "
        "any other words.\n"
        "2. The relationship preposition/phrase should satisfy the format: "
        "objectA is/are [relationship preposition/phrase] objectB.\n"
        "3. Avoid using words that depend on the current viewing "
        "perspective, such as 'front', 'back', 'behind', 'left' or 'right'"
    ),
)

LABEL_SUBCLASS = PromptTemplate(
    name="label_subclass",
    body=(
        "You are an expert in indoor/outdoor object categorization. Answer "
        'YES or NO: the category "[[Label1]]" is a subclass of '
        '"[[Label2]]".'
    ),
)

# The remaining templates are authored defaults (their published originals
# are not machine-readable): appearance grouping, distractor attributes,
# referral rewriting, and NYU-40 label prediction.

APPEARANCE_GROUPING = PromptTemplate(
    name="appearance_grouping",
    body=(
        "You are given a table of objects of the same category with their "
        "appearance attributes. Group the objects by each attribute value "
        "that distinguishes at least one object from the others.\n"
        "Objects of category \"[[Label]]\":\n"
        "[[AttributeTable]]\n"
        "Answer with one line per distinguishing attribute value, in the "
        "exact format:\n"
        "value: id1, id2\n"
        "Only use attribute values present in the table. Do not add any "
        "other text."
    ),
)

DISTRACTING_ATTRIBUTE = PromptTemplate(
    name="distracting_attribute",
    body=(
        "An object of category \"[[ObjectLabel]]\" has [[AttributeField]] "
        "\"[[AttributeValue]]\". Suggest one plausible but different "
        "[[AttributeField]] value for an object of this category. Return "
        "the value only, with no other words."
    ),
)

REFERRAL_REWRITE = PromptTemplate(
    name="referral_rewrite",
    forbids_view_terms=True,
    body=(
        "Rewrite the following object reference so it reads naturally, "
        "without changing its meaning. Keep every object category word "
        "unchanged. Do not use viewpoint-dependent words such as 'front', "
        "'back', 'behind', 'left' or 'right'. Return the rewritten "
        "reference only.\n"
        "Reference: [[Referral]]"
    ),
)

OBJECT_LABEL = PromptTemplate(
    name="object_label",
    body=(
        "Look at the object enclosed by the bounding box in the given "
        "images. Predict its class label, following the NYU-40 taxonomy. "
        "Return exactly one category name from that taxonomy and no other "
        "words."
    ),
)

DEFAULT_TEMPLATES: dict[str, PromptTemplate] = {
    t.name: t
    for t in (
        SCENE_ANNOTATION,
        FRAME_ANNOTATION,
        OBJECT_ANNOTATION,
        RELATION_JUDGMENT,
        RELATION_EXTRACTION,
        LABEL_SUBCLASS,
        APPEARANCE_GROUPING,
        DISTRACTING_ATTRIBUTE,
        REFERRAL_REWRITE,
        OBJECT_LABEL,
    )
}
