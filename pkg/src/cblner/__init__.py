"""Learning named-entity taggers from partially annotated corpora."""
