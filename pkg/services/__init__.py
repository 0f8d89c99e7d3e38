# Channel, pilot, ADC, estimator, bound and experiment services
